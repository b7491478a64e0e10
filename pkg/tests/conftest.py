"""Shared fixtures: an ARM cross-toolchain harness built on clang's
integrated assembler and ld.lld.

The C fixtures target armv4t so the compiler stays inside the decoder's
instruction subset (no UXTB/MOVW-era encodings), and link at a fixed
text base so analyses are reproducible.
"""

from __future__ import annotations

import shutil
import subprocess
from pathlib import Path

import pytest

from wherescrypto import elf

CLANG = shutil.which("clang")
LLD = shutil.which("ld.lld")


def _find_arm_tcc():
    found = shutil.which("arm-eabi-tcc")
    if found:
        return found
    candidate = Path("/opt/armtcc/bin/arm-eabi-tcc")
    return str(candidate) if candidate.exists() else None


# Independent second code generator; tools/build_arm_tcc.sh builds it.
ARM_TCC = _find_arm_tcc()

FIXTURES = Path(__file__).parent / "fixtures"
TEXT_BASE = 0x10000


def available_compilers() -> list[str]:
    names = []
    if CLANG and LLD:
        names.append("clang")
    if ARM_TCC and LLD:
        names.append("tcc")
    return names


class ArmToolchain:
    def __init__(self, workdir: Path):
        self.workdir = workdir
        self._count = 0
        self._cache: dict = {}

    def _run(self, args: list[str]) -> None:
        proc = subprocess.run(args, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(
                f"{' '.join(args)} failed:\n{proc.stderr}")

    def _fresh(self, suffix: str) -> Path:
        self._count += 1
        return self.workdir / f"tc{self._count}{suffix}"

    def assemble(self, text: str, origin: int = 0) -> bytes:
        """Assemble with clang's integrated assembler; flat binary."""
        src = self._fresh(".s")
        src.write_text(".text\n" + text + "\n")
        obj = src.with_suffix(".o")
        out = src.with_suffix(".bin")
        self._run([CLANG, "--target=armv7a-none-eabi", "-c",
                   str(src), "-o", str(obj)])
        self._run([LLD, "--oformat", "binary", f"-Ttext={origin:#x}",
                   "-o", str(out), str(obj)])
        return out.read_bytes()

    def compile(self, source: Path | str, opt: str = "O0",
                compiler_variant: str = "default") -> elf.LoadedImage:
        """Compile a C file to a linked ELF32 image with symbols."""
        if isinstance(source, str):
            src = self._fresh(".c")
            src.write_text(source)
            key = (source, opt, compiler_variant)
        else:
            src = source
            key = (str(source), opt, compiler_variant)
        if key in self._cache:
            return self._cache[key]
        obj = self._fresh(".o")
        out = obj.with_suffix(".elf")
        if compiler_variant == "tcc":
            if ARM_TCC is None:
                raise RuntimeError("arm-eabi-tcc not installed; run "
                                   "tools/build_arm_tcc.sh")
            self._run([ARM_TCC, f"-{opt}", "-c", str(src), "-o", str(obj)])
        else:
            flags = ["--target=armv4t-none-eabi", "-marm",
                     "-mfloat-abi=soft", "-ffreestanding", "-fno-builtin",
                     f"-{opt}"]
            self._run([CLANG, *flags, "-c", str(src), "-o", str(obj)])
        self._run([LLD, f"-Ttext={TEXT_BASE:#x}", "-e", f"{TEXT_BASE:#x}",
                   "-o", str(out), str(obj)])
        loaded = elf.load_elf(out.read_bytes())
        self._cache[key] = loaded
        return loaded

    def elf_path(self, source: Path, opt: str = "O0") -> Path:
        """Like compile, but returns the linked ELF file path."""
        obj = self._fresh(".o")
        out = obj.with_suffix(".elf")
        flags = ["--target=armv4t-none-eabi", "-marm",
                 "-mfloat-abi=soft", "-ffreestanding", "-fno-builtin",
                 f"-{opt}"]
        self._run([CLANG, *flags, "-c", str(source), "-o", str(obj)])
        self._run([LLD, f"-Ttext={TEXT_BASE:#x}", "-e", f"{TEXT_BASE:#x}",
                   "-o", str(out), str(obj)])
        return out


@pytest.fixture(scope="session")
def toolchain(tmp_path_factory) -> ArmToolchain:
    if not CLANG or not LLD:
        pytest.skip("clang/ld.lld not available")
    return ArmToolchain(tmp_path_factory.mktemp("armtc"))
