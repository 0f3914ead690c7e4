//! The default x86-64 subset decoder.
//!
//! Supported: an optional REX prefix, ModRM/SIB addressing with disp8/disp32
//! and RIP-relative forms, and the following instructions: mov, lea, add, sub,
//! and, or, xor, cmp, test, push, pop, inc, dec, shl, shr, nop, xchg, leave,
//! ret/retf (with or without imm16), direct jmp/call (rel8/rel32), indirect
//! jmp/call (register and memory), far jmp/call through memory, jcc
//! (rel8/rel32), int imm8, iret, syscall, sysenter, hlt, in/out, cli/sti,
//! wrmsr/rdmsr, lgdt/lidt/invlpg.
//!
//! Anything else — including legacy prefixes (66/67/F2/F3, segment overrides)
//! and a second REX — is rejected as [`DecodeError::Invalid`]. This keeps the
//! instruction universe closed so scan results can be checked against a
//! brute-force oracle.

use super::{
    DecodeError, Instruction, InstructionDecoder, MemRef, MemSize, Mnemonic, Operand, Reg,
    RelDisp, Width,
};

/// Stateless decoder for the documented x86-64 subset.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubsetDecoder;

impl InstructionDecoder for SubsetDecoder {
    fn decode(&self, region: &[u8], offset: usize) -> Result<Instruction, DecodeError> {
        decode_at(region, offset)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Rex {
    w: bool,
    r: bool,
    x: bool,
    b: bool,
    present: bool,
}

impl Rex {
    fn from_byte(b: u8) -> Self {
        Rex {
            w: b & 0x8 != 0,
            r: b & 0x4 != 0,
            x: b & 0x2 != 0,
            b: b & 0x1 != 0,
            present: true,
        }
    }
}

struct Cursor<'a> {
    region: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(region: &'a [u8], start: usize) -> Self {
        Cursor { region, pos: start }
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        let b = *self.region.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn i8(&mut self) -> Result<i8, DecodeError> {
        Ok(self.u8()? as i8)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let lo = self.u8()? as u16;
        let hi = self.u8()? as u16;
        Ok(lo | hi << 8)
    }

    fn i32(&mut self) -> Result<i32, DecodeError> {
        let mut v = 0u32;
        for shift in [0, 8, 16, 24] {
            v |= (self.u8()? as u32) << shift;
        }
        Ok(v as i32)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(8) {
            v |= (self.u8()? as u64) << shift;
        }
        Ok(v)
    }
}

fn gp(index: u8, width: Width) -> Reg {
    Reg { index, width, high: false }
}

/// 8-bit register for an encoding slot. Without REX, slots 4-7 name the
/// legacy high-byte bank.
fn gp8(index: u8, rex_present: bool) -> Reg {
    if !rex_present && (4..8).contains(&index) {
        Reg { index, width: Width::B8, high: true }
    } else {
        Reg { index, width: Width::B8, high: false }
    }
}

fn vwidth(rex: Rex) -> Width {
    if rex.w {
        Width::B64
    } else {
        Width::B32
    }
}

fn mem_size(width: Width) -> MemSize {
    match width {
        Width::B8 => MemSize::Byte,
        Width::B16 => MemSize::Word,
        Width::B32 => MemSize::Dword,
        Width::B64 => MemSize::Qword,
    }
}

/// Decoded ModRM: the register field bits and the r/m operand.
struct ModRm {
    reg_bits: u8,
    rm: Operand,
    is_mem: bool,
}

fn read_modrm(
    cur: &mut Cursor,
    rex: Rex,
    rm_width: Width,
    size: Option<MemSize>,
) -> Result<ModRm, DecodeError> {
    let modrm = cur.u8()?;
    let md = modrm >> 6;
    let reg_bits = (modrm >> 3) & 7 | (rex.r as u8) << 3;
    let rm_bits = modrm & 7;

    if md == 3 {
        let reg = if rm_width == Width::B8 {
            gp8(rm_bits | (rex.b as u8) << 3, rex.present)
        } else {
            gp(rm_bits | (rex.b as u8) << 3, rm_width)
        };
        return Ok(ModRm { reg_bits, rm: Operand::Reg(reg), is_mem: false });
    }

    let mut base = None;
    let mut index = None;
    let mut scale = 1u8;
    let mut rip_relative = false;
    let mut disp = 0i32;

    if rm_bits == 4 {
        // SIB byte.
        let sib = cur.u8()?;
        scale = 1 << (sib >> 6);
        let index_bits = (sib >> 3) & 7 | (rex.x as u8) << 3;
        if index_bits != 4 {
            // index slot 4 without REX.X means "no index"
            index = Some(gp(index_bits, Width::B64));
        }
        let base_bits = sib & 7 | (rex.b as u8) << 3;
        if sib & 7 == 5 && md == 0 {
            disp = cur.i32()?;
        } else {
            base = Some(gp(base_bits, Width::B64));
        }
    } else if rm_bits == 5 && md == 0 {
        rip_relative = true;
        disp = cur.i32()?;
    } else {
        base = Some(gp(rm_bits | (rex.b as u8) << 3, Width::B64));
    }

    match md {
        1 => disp = cur.i8()? as i32,
        2 => disp = cur.i32()?,
        _ => {}
    }

    Ok(ModRm {
        reg_bits,
        rm: Operand::Mem(MemRef { base, rip_relative, index, scale, disp, size }),
        is_mem: true,
    })
}

fn finish(
    region: &[u8],
    offset: usize,
    end: usize,
    mnemonic: Mnemonic,
    operands: Vec<Operand>,
) -> Instruction {
    debug_assert!(end - offset >= 1 && end - offset <= 15);
    Instruction {
        address: offset as u64,
        bytes: region[offset..end].to_vec(),
        mnemonic,
        operands,
    }
}

fn decode_at(region: &[u8], offset: usize) -> Result<Instruction, DecodeError> {
    if offset >= region.len() {
        return Err(DecodeError::Truncated);
    }
    let mut cur = Cursor::new(region, offset);

    let mut rex = Rex::default();
    let mut opcode = cur.u8()?;
    if (0x40..=0x4F).contains(&opcode) {
        rex = Rex::from_byte(opcode);
        opcode = cur.u8()?;
        if (0x40..=0x4F).contains(&opcode) {
            return Err(DecodeError::Invalid);
        }
    }

    let ins = |cur: &Cursor, mn, ops| Ok(finish(region, offset, cur.pos, mn, ops));

    // rel8/rel32 helpers capture the field span for layout fixups.
    let rel = |cur: &mut Cursor, width: u8| -> Result<Operand, DecodeError> {
        let field_pos = (cur.pos - offset) as u8;
        let disp = match width {
            1 => cur.i8()? as i64,
            _ => cur.i32()? as i64,
        };
        let end = cur.pos - offset;
        Ok(Operand::Rel(RelDisp {
            disp,
            target: offset as i64 + end as i64 + disp,
            field_pos,
            field_width: width,
        }))
    };

    // ALU block: add/or/and/sub/xor/cmp share a 6-opcode layout.
    let alu = |base: u8| -> Option<Mnemonic> {
        match base {
            0x00 => Some(Mnemonic::Add),
            0x08 => Some(Mnemonic::Or),
            0x20 => Some(Mnemonic::And),
            0x28 => Some(Mnemonic::Sub),
            0x30 => Some(Mnemonic::Xor),
            0x38 => Some(Mnemonic::Cmp),
            _ => None,
        }
    };
    // Group-1 digits (80/81/83): adc/sbb are outside the subset.
    let grp1 = |digit: u8| -> Option<Mnemonic> {
        match digit {
            0 => Some(Mnemonic::Add),
            1 => Some(Mnemonic::Or),
            4 => Some(Mnemonic::And),
            5 => Some(Mnemonic::Sub),
            6 => Some(Mnemonic::Xor),
            7 => Some(Mnemonic::Cmp),
            _ => None,
        }
    };
    let grp2 = |digit: u8| -> Option<Mnemonic> {
        match digit {
            4 => Some(Mnemonic::Shl),
            5 => Some(Mnemonic::Shr),
            _ => None,
        }
    };

    match opcode {
        // ALU op r/m, r / r, r/m / acc, imm
        0x00..=0x05 | 0x08..=0x0D | 0x20..=0x25 | 0x28..=0x2D | 0x30..=0x35 | 0x38..=0x3D => {
            let base = opcode & 0xF8;
            let form = opcode & 7;
            // 0x0F escape and 0x26/0x2E/0x36/0x3E segment prefixes fall in
            // the gaps (form 6/7), which this arm never matches.
            let mn = alu(base & 0x38).ok_or(DecodeError::Invalid)?;
            match form {
                0..=3 => {
                    let w = if form & 1 == 0 { Width::B8 } else { vwidth(rex) };
                    let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
                    let reg = if w == Width::B8 {
                        Operand::Reg(gp8(m.reg_bits, rex.present))
                    } else {
                        Operand::Reg(gp(m.reg_bits, w))
                    };
                    let ops = if form < 2 { vec![m.rm, reg] } else { vec![reg, m.rm] };
                    ins(&cur, mn, ops)
                }
                4 => {
                    let v = cur.i8()? as i64;
                    ins(&cur, mn, vec![
                        Operand::Reg(gp8(0, rex.present)),
                        Operand::Imm { value: v, width: Width::B8 },
                    ])
                }
                5 => {
                    let w = vwidth(rex);
                    let v = cur.i32()? as i64;
                    ins(&cur, mn, vec![
                        Operand::Reg(gp(0, w)),
                        Operand::Imm { value: v, width: w },
                    ])
                }
                _ => Err(DecodeError::Invalid),
            }
        }

        0x50..=0x57 => {
            let reg = gp((opcode - 0x50) | (rex.b as u8) << 3, Width::B64);
            ins(&cur, Mnemonic::Push, vec![Operand::Reg(reg)])
        }
        0x58..=0x5F => {
            let reg = gp((opcode - 0x58) | (rex.b as u8) << 3, Width::B64);
            ins(&cur, Mnemonic::Pop, vec![Operand::Reg(reg)])
        }

        0x68 => {
            let v = cur.i32()? as i64;
            ins(&cur, Mnemonic::Push, vec![Operand::Imm { value: v, width: Width::B64 }])
        }
        0x6A => {
            let v = cur.i8()? as i64;
            ins(&cur, Mnemonic::Push, vec![Operand::Imm { value: v, width: Width::B64 }])
        }

        0x70..=0x7F => {
            let mn = jcc_mnemonic(opcode & 0x0F);
            let r = rel(&mut cur, 1)?;
            ins(&cur, mn, vec![r])
        }

        0x80 | 0x81 | 0x83 => {
            let w = if opcode == 0x80 { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            let mn = grp1(m.reg_bits & 7).ok_or(DecodeError::Invalid)?;
            let (value, iw) = match opcode {
                0x80 => (cur.i8()? as i64, Width::B8),
                0x81 => (cur.i32()? as i64, w),
                _ => (cur.i8()? as i64, w), // 83: imm8 sign-extended
            };
            ins(&cur, mn, vec![m.rm, Operand::Imm { value, width: iw }])
        }

        0x84..=0x8B => {
            let (mn, form_rm_dst, byte) = match opcode {
                0x84 => (Mnemonic::Test, true, true),
                0x85 => (Mnemonic::Test, true, false),
                0x86 => (Mnemonic::Xchg, true, true),
                0x87 => (Mnemonic::Xchg, true, false),
                0x88 => (Mnemonic::Mov, true, true),
                0x89 => (Mnemonic::Mov, true, false),
                0x8A => (Mnemonic::Mov, false, true),
                _ => (Mnemonic::Mov, false, false),
            };
            let w = if byte { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            let reg = if byte {
                Operand::Reg(gp8(m.reg_bits, rex.present))
            } else {
                Operand::Reg(gp(m.reg_bits, w))
            };
            let ops = if form_rm_dst { vec![m.rm, reg] } else { vec![reg, m.rm] };
            ins(&cur, mn, ops)
        }

        0x8D => {
            let w = vwidth(rex);
            let m = read_modrm(&mut cur, rex, w, None)?;
            if !m.is_mem {
                return Err(DecodeError::Invalid);
            }
            ins(&cur, Mnemonic::Lea, vec![Operand::Reg(gp(m.reg_bits, w)), m.rm])
        }

        0x8F => {
            let m = read_modrm(&mut cur, rex, Width::B64, Some(MemSize::Qword))?;
            if m.reg_bits & 7 != 0 {
                return Err(DecodeError::Invalid);
            }
            ins(&cur, Mnemonic::Pop, vec![m.rm])
        }

        0x90 => {
            if rex.b {
                let w = vwidth(rex);
                ins(&cur, Mnemonic::Xchg, vec![Operand::Reg(gp(0, w)), Operand::Reg(gp(8, w))])
            } else {
                ins(&cur, Mnemonic::Nop, vec![])
            }
        }
        0x91..=0x97 => {
            let w = vwidth(rex);
            let other = gp((opcode - 0x90) | (rex.b as u8) << 3, w);
            ins(&cur, Mnemonic::Xchg, vec![Operand::Reg(gp(0, w)), Operand::Reg(other)])
        }

        0xA8 => {
            let v = cur.i8()? as i64;
            ins(&cur, Mnemonic::Test, vec![
                Operand::Reg(gp8(0, rex.present)),
                Operand::Imm { value: v, width: Width::B8 },
            ])
        }
        0xA9 => {
            let w = vwidth(rex);
            let v = cur.i32()? as i64;
            ins(&cur, Mnemonic::Test, vec![
                Operand::Reg(gp(0, w)),
                Operand::Imm { value: v, width: w },
            ])
        }

        0xB0..=0xB7 => {
            let reg = gp8((opcode - 0xB0) | (rex.b as u8) << 3, rex.present);
            let v = cur.u8()? as i64;
            ins(&cur, Mnemonic::Mov, vec![
                Operand::Reg(reg),
                Operand::Imm { value: v, width: Width::B8 },
            ])
        }
        0xB8..=0xBF => {
            let w = vwidth(rex);
            let reg = gp((opcode - 0xB8) | (rex.b as u8) << 3, w);
            let value = if rex.w { cur.u64()? as i64 } else { cur.i32()? as i64 };
            ins(&cur, Mnemonic::Mov, vec![Operand::Reg(reg), Operand::Imm { value, width: w }])
        }

        0xC0 | 0xC1 => {
            let w = if opcode == 0xC0 { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            let mn = grp2(m.reg_bits & 7).ok_or(DecodeError::Invalid)?;
            let v = cur.u8()? as i64;
            ins(&cur, mn, vec![m.rm, Operand::Imm { value: v, width: Width::B8 }])
        }
        0xD0 | 0xD1 => {
            let w = if opcode == 0xD0 { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            let mn = grp2(m.reg_bits & 7).ok_or(DecodeError::Invalid)?;
            ins(&cur, mn, vec![m.rm, Operand::Imm { value: 1, width: Width::B8 }])
        }
        0xD2 | 0xD3 => {
            let w = if opcode == 0xD2 { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            let mn = grp2(m.reg_bits & 7).ok_or(DecodeError::Invalid)?;
            ins(&cur, mn, vec![m.rm, Operand::Reg(gp8(1, rex.present))])
        }

        0xC2 => {
            let v = cur.u16()? as i64;
            ins(&cur, Mnemonic::Ret, vec![Operand::Imm { value: v, width: Width::B16 }])
        }
        0xC3 => ins(&cur, Mnemonic::Ret, vec![]),
        0xCA => {
            let v = cur.u16()? as i64;
            ins(&cur, Mnemonic::Retf, vec![Operand::Imm { value: v, width: Width::B16 }])
        }
        0xCB => ins(&cur, Mnemonic::Retf, vec![]),

        0xC6 | 0xC7 => {
            let w = if opcode == 0xC6 { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            if m.reg_bits & 7 != 0 {
                return Err(DecodeError::Invalid);
            }
            let (value, iw) = if opcode == 0xC6 {
                (cur.u8()? as i64, Width::B8)
            } else {
                (cur.i32()? as i64, w)
            };
            ins(&cur, Mnemonic::Mov, vec![m.rm, Operand::Imm { value, width: iw }])
        }

        0xC9 => ins(&cur, Mnemonic::Leave, vec![]),
        0xCD => {
            let v = cur.u8()? as i64;
            ins(&cur, Mnemonic::Int, vec![Operand::Imm { value: v, width: Width::B8 }])
        }
        0xCF => ins(&cur, Mnemonic::Iret, vec![]),

        0xE4 => {
            let v = cur.u8()? as i64;
            ins(&cur, Mnemonic::In, vec![
                Operand::Reg(gp8(0, rex.present)),
                Operand::Imm { value: v, width: Width::B8 },
            ])
        }
        0xE5 => {
            let v = cur.u8()? as i64;
            ins(&cur, Mnemonic::In, vec![
                Operand::Reg(gp(0, Width::B32)),
                Operand::Imm { value: v, width: Width::B8 },
            ])
        }
        0xE6 => {
            let v = cur.u8()? as i64;
            ins(&cur, Mnemonic::Out, vec![
                Operand::Imm { value: v, width: Width::B8 },
                Operand::Reg(gp8(0, rex.present)),
            ])
        }
        0xE7 => {
            let v = cur.u8()? as i64;
            ins(&cur, Mnemonic::Out, vec![
                Operand::Imm { value: v, width: Width::B8 },
                Operand::Reg(gp(0, Width::B32)),
            ])
        }
        0xEC => ins(&cur, Mnemonic::In, vec![
            Operand::Reg(gp8(0, rex.present)),
            Operand::Reg(gp(2, Width::B16)),
        ]),
        0xED => ins(&cur, Mnemonic::In, vec![
            Operand::Reg(gp(0, Width::B32)),
            Operand::Reg(gp(2, Width::B16)),
        ]),
        0xEE => ins(&cur, Mnemonic::Out, vec![
            Operand::Reg(gp(2, Width::B16)),
            Operand::Reg(gp8(0, rex.present)),
        ]),
        0xEF => ins(&cur, Mnemonic::Out, vec![
            Operand::Reg(gp(2, Width::B16)),
            Operand::Reg(gp(0, Width::B32)),
        ]),

        0xE8 => {
            let r = rel(&mut cur, 4)?;
            ins(&cur, Mnemonic::Call, vec![r])
        }
        0xE9 => {
            let r = rel(&mut cur, 4)?;
            ins(&cur, Mnemonic::Jmp, vec![r])
        }
        0xEB => {
            let r = rel(&mut cur, 1)?;
            ins(&cur, Mnemonic::Jmp, vec![r])
        }

        0xF4 => ins(&cur, Mnemonic::Hlt, vec![]),
        0xFA => ins(&cur, Mnemonic::Cli, vec![]),
        0xFB => ins(&cur, Mnemonic::Sti, vec![]),

        0xF6 | 0xF7 => {
            let w = if opcode == 0xF6 { Width::B8 } else { vwidth(rex) };
            let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
            if m.reg_bits & 7 != 0 {
                return Err(DecodeError::Invalid);
            }
            let (value, iw) = if opcode == 0xF6 {
                (cur.i8()? as i64, Width::B8)
            } else {
                (cur.i32()? as i64, w)
            };
            ins(&cur, Mnemonic::Test, vec![m.rm, Operand::Imm { value, width: iw }])
        }

        0xFE => {
            let m = read_modrm(&mut cur, rex, Width::B8, Some(MemSize::Byte))?;
            let mn = match m.reg_bits & 7 {
                0 => Mnemonic::Inc,
                1 => Mnemonic::Dec,
                _ => return Err(DecodeError::Invalid),
            };
            ins(&cur, mn, vec![m.rm])
        }

        0xFF => {
            // Group 5. Near branches force 64-bit operands in long mode.
            let probe = *cur.region.get(cur.pos).ok_or(DecodeError::Truncated)?;
            let digit = (probe >> 3) & 7;
            match digit {
                0 | 1 => {
                    let w = vwidth(rex);
                    let m = read_modrm(&mut cur, rex, w, Some(mem_size(w)))?;
                    let mn = if digit == 0 { Mnemonic::Inc } else { Mnemonic::Dec };
                    ins(&cur, mn, vec![m.rm])
                }
                2 | 4 => {
                    let m = read_modrm(&mut cur, rex, Width::B64, Some(MemSize::Qword))?;
                    let mn = if digit == 2 { Mnemonic::Call } else { Mnemonic::Jmp };
                    ins(&cur, mn, vec![m.rm])
                }
                3 | 5 => {
                    let m = read_modrm(&mut cur, rex, Width::B64, None)?;
                    if !m.is_mem {
                        return Err(DecodeError::Invalid);
                    }
                    let mn = if digit == 3 { Mnemonic::CallFar } else { Mnemonic::JmpFar };
                    ins(&cur, mn, vec![m.rm])
                }
                6 => {
                    let m = read_modrm(&mut cur, rex, Width::B64, Some(MemSize::Qword))?;
                    ins(&cur, Mnemonic::Push, vec![m.rm])
                }
                _ => Err(DecodeError::Invalid),
            }
        }

        0x0F => {
            let op2 = cur.u8()?;
            match op2 {
                0x01 => {
                    let m = read_modrm(&mut cur, rex, Width::B64, None)?;
                    if !m.is_mem {
                        return Err(DecodeError::Invalid);
                    }
                    let mn = match m.reg_bits & 7 {
                        2 => Mnemonic::Lgdt,
                        3 => Mnemonic::Lidt,
                        7 => Mnemonic::Invlpg,
                        _ => return Err(DecodeError::Invalid),
                    };
                    ins(&cur, mn, vec![m.rm])
                }
                0x05 => ins(&cur, Mnemonic::Syscall, vec![]),
                0x30 => ins(&cur, Mnemonic::Wrmsr, vec![]),
                0x32 => ins(&cur, Mnemonic::Rdmsr, vec![]),
                0x34 => ins(&cur, Mnemonic::Sysenter, vec![]),
                0x80..=0x8F => {
                    let mn = jcc_mnemonic(op2 & 0x0F);
                    let r = rel(&mut cur, 4)?;
                    ins(&cur, mn, vec![r])
                }
                _ => Err(DecodeError::Invalid),
            }
        }

        _ => Err(DecodeError::Invalid),
    }
}

fn jcc_mnemonic(cc: u8) -> Mnemonic {
    use Mnemonic::*;
    match cc {
        0x0 => Jo,
        0x1 => Jno,
        0x2 => Jb,
        0x3 => Jae,
        0x4 => Je,
        0x5 => Jne,
        0x6 => Jbe,
        0x7 => Ja,
        0x8 => Js,
        0x9 => Jns,
        0xA => Jp,
        0xB => Jnp,
        0xC => Jl,
        0xD => Jge,
        0xE => Jle,
        _ => Jg,
    }
}
