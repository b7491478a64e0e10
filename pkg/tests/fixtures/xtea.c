/* XTEA block cipher, reference encipher routine. */

typedef unsigned int u32;

void xtea_encipher(unsigned num_rounds, u32 v[2], const u32 key[4])
{
    unsigned i;
    u32 v0 = v[0], v1 = v[1], sum = 0, delta = 0x9E3779B9;

    for (i = 0; i < num_rounds; i++) {
        v0 += (((v1 << 4) ^ (v1 >> 5)) + v1) ^ (sum + key[sum & 3]);
        sum += delta;
        v1 += (((v0 << 4) ^ (v0 >> 5)) + v0) ^ (sum + key[(sum >> 11) & 3]);
    }
    v[0] = v0;
    v[1] = v1;
}
