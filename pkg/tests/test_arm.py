"""Decoder and lifting tests.

The encoding battery is the decoder's oracle: every line is assembled
both by clang's integrated assembler and by the bundled mini-assembler,
the two byte streams must agree, and decoding must reproduce the source
instruction.  Lifting tests drive single instructions against a fresh
execution state and check the graph structure they request.
"""

from __future__ import annotations

import pytest

from wherescrypto import arm
from wherescrypto.arm import OutcomeKind, UndecodableError, decode_word
from wherescrypto.asm import AsmError, assemble
from wherescrypto.dfg import NodeKind
from wherescrypto.symexec import Config, ExecState

BATTERY = """\
mov r0, #4
movs r1, r2
mvn r3, r4
add r0, r1, r2
adds r0, r1, #0x1000
adc r5, r6, r7
sub r0, r1, r2
subs r4, r4, #1
rsb r2, r3, #0
and r1, r2, r3
ands r1, r2, #0xff
orr r0, r0, r1
eor r3, r3, r4
bic r5, r6, #7
mul r0, r1, r2
mla r3, r4, r5, r6
lsl r0, r1, #3
lsr r2, r3, #5
asr r4, r5, #31
ror r6, r7, #8
lsl r0, r1, r2
cmp r0, #0
cmp r1, r2
cmn r3, #4
tst r5, #1
add r0, r1, r2, lsl #2
sub r3, r4, r5, lsr #16
eor r6, r7, r8, ror #13
mov r9, r10, asr #2
ldr r0, [r1]
ldr r2, [sp, #8]
ldr r3, [r4, #-12]
str r5, [r6, #16]
strb r7, [r8, #1]
ldrb r9, [r10, #2]
ldr r0, [r1, r2]
ldr r3, [r4, r5, lsl #2]
str r6, [r7, -r8]
ldr r0, [r1], #4
str r2, [r3], #8
ldr r4, [r5, #4]!
str r6, [r7, #-8]!
push {r4, r5, r6, lr}
pop {r4, r5, r6, pc}
stmia r0, {r1, r2, r3}
ldmia r4!, {r5, r6}
stmdb sp!, {r0, r1}
ldmib r2, {r3, r4}
b target
bl target
bne target
bge target
bgt target
ble target
blt target
beq target
bhi target
bls target
bcs target
bcc target
target:
bx lr
movne r0, #1
addeq r2, r2, #4
nop
"""


def test_battery_matches_clang(toolchain):
    ours = assemble(BATTERY, origin=0)
    theirs = toolchain.assemble(BATTERY, origin=0)
    assert len(ours) == len(theirs)
    for off in range(0, len(ours), 4):
        mine = int.from_bytes(ours[off:off + 4], "little")
        ref = int.from_bytes(theirs[off:off + 4], "little")
        assert mine == ref, (
            f"offset {off:#x}: mine {mine:08x} != clang {ref:08x}")


def test_battery_decodes_fully():
    image = assemble(BATTERY, origin=0)
    for off in range(0, len(image), 4):
        word = int.from_bytes(image[off:off + 4], "little")
        ins = decode_word(word, off)
        assert ins.address == off


# ---------------------------------------------------------------- decode


def test_decode_mov_immediate():
    ins = decode_word(0xE3A00004, 0)
    assert (ins.mnemonic, ins.cond, ins.set_flags) == ("MOV", "AL",
                                                       False)
    assert ins.operands == (arm.Reg(0), arm.Imm(4))


def test_decode_add_registers():
    ins = decode_word(0xE0810002, 0)
    assert ins.mnemonic == "ADD"
    assert ins.operands == (arm.Reg(0), arm.Reg(1), arm.Reg(2))


def test_decode_all_zero_word_is_conditional_and():
    ins = decode_word(0x00000000, 0)
    assert (ins.mnemonic, ins.cond) == ("AND", "EQ")
    assert ins.operands == (arm.Reg(0), arm.Reg(0), arm.Reg(0))


def test_decode_rotated_immediate():
    word = int.from_bytes(assemble("mov r0, #0x3FC00")[:4], "little")
    ins = decode_word(word, 0)
    assert ins.operands[1] == arm.Imm(0x3FC00)


def test_decode_ror_shifted_operand():
    word = int.from_bytes(assemble("eor r6, r7, r8, ror #13")[:4],
                          "little")
    ins = decode_word(word, 0)
    assert ins.operands[2] == arm.ShiftedReg(8, "ROR", amount=13)


def test_decode_push_pop():
    image = assemble("push {r4, lr}\npop {r4, pc}")
    first = decode_word(int.from_bytes(image[:4], "little"), 0)
    second = decode_word(int.from_bytes(image[4:8], "little"), 4)
    assert first.mnemonic == "PUSH"
    assert first.operands[0].regs == (4, 14)
    assert second.mnemonic == "POP"
    assert second.operands[0].regs == (4, 15)


def test_decode_post_index():
    word = int.from_bytes(assemble("ldr r0, [r1], #4")[:4], "little")
    ins = decode_word(word, 0)
    mem = ins.operands[1]
    assert (mem.pre, mem.writeback, mem.add) == (False, True, True)
    assert mem.offset == arm.Imm(4)


def test_decode_branch_target():
    image = assemble("b skip\nnop\nskip: nop", origin=0x100)
    ins = decode_word(int.from_bytes(image[:4], "little"), 0x100)
    assert ins.mnemonic == "B"
    assert ins.operands[0].address == 0x108


@pytest.mark.parametrize("word,why", [
    (0xFA000000, "unconditional space"),        # BLX imm
    (0xE0C10002, "SBC outside subset"),
    (0xE1A00060, "RRX"),
    (0xE0832291, "long multiply"),
    (0xE1D100B0, "halfword load"),
    (0xEF000000, "swi"),
    (0xE4B10000, "user-mode translate"),
    (0xE10F0000, "mrs"),
])
def test_undecodable_words(word, why):
    with pytest.raises(UndecodableError):
        decode_word(word, 0)


def test_misaligned_address_rejected():
    with pytest.raises(UndecodableError):
        decode_word(0xE3A00004, 2)


def test_assembler_rejects_unencodable_immediate():
    with pytest.raises(AsmError):
        assemble("mov r0, #0x12345")


def test_literal_pool_pseudo():
    image = assemble("ldr r0, =0x9e3779b9\nbx lr")
    ins = decode_word(int.from_bytes(image[:4], "little"), 0)
    assert ins.mnemonic == "LDR"
    assert ins.operands[1].base == 15
    assert int.from_bytes(image[8:12], "little") == 0x9E3779B9


# ----------------------------------------------------------------- lift


def lift(text: str, steps: int | None = None, entry: int = 0):
    image = assemble(text, origin=entry)
    state = ExecState.initial(entry, image, entry, Config(timeout=1))
    count = steps if steps is not None else len(image) // 4
    outcome = None
    for _ in range(count):
        ins = arm.decode(image, state.pc, entry)
        outcome = arm.step(state, ins)
        if outcome.kind in (OutcomeKind.FALLTHROUGH,):
            state.pc = ins.address + 4
        else:
            break
    return state, outcome


def test_lift_add_registers():
    state, outcome = lift("add r0, r1, r2")
    assert outcome.kind is OutcomeKind.FALLTHROUGH
    node = state.graph.node(state.regs["R0"])
    assert node.kind is NodeKind.ADD
    assert node.inputs == (state.regs["R1"], state.regs["R2"])


def test_lift_store_load_round_trip():
    state, _ = lift("str r3, [sp, #8]\nldr r2, [sp, #8]\n"
                    "and r2, r2, #0xff")
    g = state.graph
    node = g.node(state.regs["R2"])
    assert node.kind is NodeKind.AND
    inputs = {g.node(i).kind for i in node.inputs}
    assert inputs == {NodeKind.INPUT, NodeKind.CONST}
    assert state.regs["R3"] in node.inputs


def test_lift_ror_is_left_rotate():
    state, _ = lift("ror r0, r4, #8")
    g = state.graph
    node = g.node(state.regs["R0"])
    assert node.kind is NodeKind.ROTATE
    assert g.const_value(node.inputs[1]) == 24


def test_lift_register_ror_amount():
    state, _ = lift("ror r0, r4, r5")
    g = state.graph
    node = g.node(state.regs["R0"])
    assert node.kind is NodeKind.ROTATE
    amount = g.node(node.inputs[1])
    assert amount.kind is NodeKind.SUB
    assert g.const_value(amount.inputs[0]) == 32


def test_lift_mvn_and_bic():
    state, _ = lift("mvn r0, r1\nbic r2, r3, r4")
    g = state.graph
    mvn = g.node(state.regs["R0"])
    assert mvn.kind is NodeKind.XOR
    assert any(g.is_const(i) and g.const_value(i) == 0xFFFFFFFF
               for i in mvn.inputs)
    bic = g.node(state.regs["R2"])
    assert bic.kind is NodeKind.AND
    other = [i for i in bic.inputs if i != state.regs["R3"]][0]
    assert g.node(other).kind is NodeKind.XOR


def test_lift_mul_mla():
    state, _ = lift("mul r0, r1, r2\nmla r3, r4, r5, r6")
    g = state.graph
    assert g.node(state.regs["R0"]).kind is NodeKind.MULT
    mla = g.node(state.regs["R3"])
    assert mla.kind is NodeKind.ADD
    assert any(g.node(i).kind is NodeKind.MULT for i in mla.inputs)


def test_lift_literal_load():
    state, _ = lift("ldr r0, =0x12345678\nnop")
    g = state.graph
    assert g.const_value(state.regs["R0"]) == 0x12345678


def test_lift_pc_read_is_const():
    state, _ = lift("add r0, pc, #8")
    g = state.graph
    assert g.const_value(state.regs["R0"]) == 16


def test_lift_ldrb_masks():
    state, _ = lift("ldrb r0, [r1]")
    g = state.graph
    node = g.node(state.regs["R0"])
    assert node.kind is NodeKind.AND
    kinds = {g.node(i).kind for i in node.inputs}
    assert NodeKind.LOAD in kinds


def test_lift_post_index_writeback():
    state, _ = lift("ldr r0, [r1], #4")
    g = state.graph
    assert g.node(state.regs["R0"]).kind is NodeKind.LOAD
    r1 = g.node(state.regs["R1"])
    assert r1.kind is NodeKind.ADD
    assert any(g.is_const(i) and g.const_value(i) == 4
               for i in r1.inputs)


def test_lift_push_stores_below_sp():
    state, _ = lift("push {r4, lr}")
    g = state.graph
    sp = g.node(state.regs["SP"])
    assert sp.kind is NodeKind.ADD
    consts = [g.const_value(i) for i in sp.inputs if g.is_const(i)]
    assert consts == [(1 << 32) - 8]
    stores = [n for n in g.nodes.values() if n.kind is NodeKind.STORE]
    assert len(stores) == 2


def test_lift_push_pop_round_trip_returns():
    text = "push {r4, lr}\nnop\npop {r4, pc}"
    state, outcome = lift(text, steps=3)
    assert outcome.kind is OutcomeKind.RETURN


def test_lift_bl_is_call():
    state, outcome = lift("bl 0x40", steps=1)
    assert outcome.kind is OutcomeKind.CALL
    assert outcome.target == 0x40
    assert outcome.return_address == 4


def test_lift_bx_lr_returns():
    state, outcome = lift("bx lr", steps=1)
    assert outcome.kind is OutcomeKind.RETURN


def test_lift_mov_pc_lr_returns():
    state, outcome = lift("mov pc, lr", steps=1)
    assert outcome.kind is OutcomeKind.RETURN


def test_lift_symbolic_pc_write_raises():
    with pytest.raises(arm.UnsupportedPcWrite):
        lift("bx r4", steps=1)


def test_lift_conditional_probe():
    state, outcome = lift("cmp r0, #5\nmovne r1, #1", steps=2)
    assert outcome.kind is OutcomeKind.CONDITIONAL
    v1, op, v2 = outcome.condition
    assert op == "=="
    assert outcome.expect_true is False
    assert v1 == state.regs["R0"]
    assert state.graph.const_value(v2) == 5


def test_lift_cmn_tst_flag_sources():
    state, _ = lift("cmn r1, #4")
    g = state.graph
    v1, v2 = state.flag_source
    assert g.node(v1).kind is NodeKind.ADD
    assert g.const_value(v2) == 0

    state, _ = lift("tst r5, #1")
    g = state.graph
    v1, v2 = state.flag_source
    assert g.node(v1).kind is NodeKind.AND


def test_lift_subs_compares_operands():
    state, _ = lift("subs r4, r4, #1")
    g = state.graph
    v1, v2 = state.flag_source
    assert v1 == g.request_input("R4")
    assert g.const_value(v2) == 1


def test_lift_unknown_flags_fall_back_to_input():
    state, outcome = lift("beq 0x20", steps=1)
    assert outcome.kind is OutcomeKind.CONDITIONAL
    v1, op, v2 = outcome.condition
    assert state.graph.node(v1).symbol == "cpsr0"


def test_lift_approx_conditions_flagged():
    state, outcome = lift("cmp r0, #5\nbhi 0x20", steps=2)
    assert outcome.kind is OutcomeKind.CONDITIONAL
    assert any("HI" in a for a in state.approx)


def test_lift_asr_flagged():
    state, _ = lift("asr r0, r1, #2")
    assert any("ASR" in a for a in state.approx)
    assert state.graph.node(state.regs["R0"]).kind is NodeKind.SHR
