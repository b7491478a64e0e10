"""Minimal ELF32 reader: PT_LOAD segments into a flat image, plus
function symbols from .symtab.

Only what the analysis front end needs; no relocation, no dynamic
linking.  Anything structurally off raises ElfError.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field


class ElfError(Exception):
    pass


@dataclass
class LoadedImage:
    image: bytes
    base: int
    symbols: dict[str, int] = field(default_factory=dict)
    functions: dict[str, int] = field(default_factory=dict)


def load_flat(data: bytes, base: int) -> LoadedImage:
    return LoadedImage(bytes(data), base)


def load_elf(data: bytes) -> LoadedImage:
    if len(data) < 52 or data[:4] != b"\x7fELF":
        raise ElfError("not an ELF file")
    if data[4] != 1:
        raise ElfError("not ELF32")
    if data[5] != 1:
        raise ElfError("not little-endian")
    (e_phoff, e_shoff) = struct.unpack_from("<II", data, 28)
    (e_phentsize, e_phnum, e_shentsize, e_shnum) = struct.unpack_from(
        "<HHHH", data, 42)

    segments = []
    for i in range(e_phnum):
        off = e_phoff + i * e_phentsize
        (p_type, p_offset, p_vaddr, _p_paddr, p_filesz,
         p_memsz) = struct.unpack_from("<IIIIII", data, off)
        if p_type == 1 and p_memsz:                 # PT_LOAD
            segments.append((p_vaddr, p_offset, p_filesz, p_memsz))
    if not segments:
        raise ElfError("no loadable segments")

    base = min(s[0] for s in segments)
    top = max(s[0] + s[3] for s in segments)
    image = bytearray(top - base)
    for vaddr, offset, filesz, _memsz in segments:
        if offset + filesz > len(data):
            raise ElfError("segment outside file")
        image[vaddr - base:vaddr - base + filesz] = \
            data[offset:offset + filesz]

    loaded = LoadedImage(bytes(image), base)
    _read_symbols(data, e_shoff, e_shentsize, e_shnum, loaded)
    return loaded


def _read_symbols(data: bytes, e_shoff: int, e_shentsize: int,
                  e_shnum: int, loaded: LoadedImage) -> None:
    sections = []
    for i in range(e_shnum):
        off = e_shoff + i * e_shentsize
        if off + 40 > len(data):
            return
        (_name, sh_type, _flags, _addr, sh_offset, sh_size, sh_link,
         _info, _align, sh_entsize) = struct.unpack_from("<10I", data,
                                                         off)
        sections.append((sh_type, sh_offset, sh_size, sh_link,
                         sh_entsize))
    for sh_type, sh_offset, sh_size, sh_link, sh_entsize in sections:
        if sh_type != 2:                            # SHT_SYMTAB
            continue
        if not (0 <= sh_link < len(sections)):
            continue
        str_off, str_size = sections[sh_link][1], sections[sh_link][2]
        strtab = data[str_off:str_off + str_size]
        count = sh_size // max(sh_entsize, 16)
        for i in range(count):
            off = sh_offset + i * sh_entsize
            (st_name, st_value, _size, st_info, _other,
             st_shndx) = struct.unpack_from("<IIIBBH", data, off)
            if st_shndx == 0 or st_name >= len(strtab):
                continue
            end = strtab.find(b"\0", st_name)
            name = strtab[st_name:end].decode("utf-8", "replace")
            if not name:
                continue
            address = st_value & ~1                 # clear thumb bit
            loaded.symbols[name] = address
            if st_info & 0xF == 2:                  # STT_FUNC
                loaded.functions[name] = address
