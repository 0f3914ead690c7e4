//! Executable byte regions, loaded from ELF binaries or raw fixtures.
//!
//! Loading is segment-granular (program headers, not section headers) so
//! stripped binaries work, and only the file-backed bytes of executable
//! segments are taken: zero-fill tails hold no code bytes to scan.

use thiserror::Error;

/// A contiguous run of executable bytes at a virtual address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub base: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("not an ELF file")]
    NotElf,
    #[error("unsupported ELF (need 64-bit little-endian)")]
    Unsupported,
    #[error("malformed ELF: {0}")]
    Malformed(&'static str),
    #[error("empty input")]
    EmptyInput,
}

/// Wraps raw bytes as a region based at `base`.
pub fn load_raw_region(bytes: &[u8], base: u64) -> Result<Region, LoadError> {
    if bytes.is_empty() {
        return Err(LoadError::EmptyInput);
    }
    base.checked_add(bytes.len() as u64)
        .ok_or(LoadError::Malformed("base + length overflows"))?;
    Ok(Region { name: "raw".to_string(), base, bytes: bytes.to_vec() })
}

const PT_LOAD: u32 = 1;
const PF_X: u32 = 1;

fn u16le(b: &[u8], off: usize) -> Result<u16, LoadError> {
    let s = b
        .get(off..off + 2)
        .ok_or(LoadError::Malformed("header field out of bounds"))?;
    Ok(u16::from_le_bytes([s[0], s[1]]))
}

fn u32le(b: &[u8], off: usize) -> Result<u32, LoadError> {
    let s = b
        .get(off..off + 4)
        .ok_or(LoadError::Malformed("header field out of bounds"))?;
    Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

fn u64le(b: &[u8], off: usize) -> Result<u64, LoadError> {
    let s = b
        .get(off..off + 8)
        .ok_or(LoadError::Malformed("header field out of bounds"))?;
    Ok(u64::from_le_bytes(s.try_into().unwrap()))
}

/// Extracts one region per executable `PT_LOAD` segment of a 64-bit
/// little-endian ELF, restricted to its file-backed bytes.
pub fn load_elf_exec_regions(file_bytes: &[u8]) -> Result<Vec<Region>, LoadError> {
    if file_bytes.len() < 4 || &file_bytes[0..4] != b"\x7fELF" {
        return Err(LoadError::NotElf);
    }
    if file_bytes.len() < 64 {
        return Err(LoadError::Malformed("truncated ELF header"));
    }
    // EI_CLASS must be ELFCLASS64, EI_DATA must be ELFDATA2LSB.
    if file_bytes[4] != 2 || file_bytes[5] != 1 {
        return Err(LoadError::Unsupported);
    }

    let e_phoff = u64le(file_bytes, 0x20)?;
    let e_phentsize = u16le(file_bytes, 0x36)? as u64;
    let e_phnum = u16le(file_bytes, 0x38)? as u64;

    if e_phnum == 0 {
        return Ok(Vec::new());
    }
    if e_phentsize < 56 {
        return Err(LoadError::Malformed("program header entry too small"));
    }
    let table_len = e_phentsize
        .checked_mul(e_phnum)
        .ok_or(LoadError::Malformed("program header table overflows"))?;
    let table_end = e_phoff
        .checked_add(table_len)
        .ok_or(LoadError::Malformed("program header table overflows"))?;
    if table_end > file_bytes.len() as u64 {
        return Err(LoadError::Malformed("program header table out of bounds"));
    }

    let mut regions = Vec::new();
    for i in 0..e_phnum {
        let ph = (e_phoff + i * e_phentsize) as usize;
        let p_type = u32le(file_bytes, ph)?;
        let p_flags = u32le(file_bytes, ph + 4)?;
        if p_type != PT_LOAD || p_flags & PF_X == 0 {
            continue;
        }
        let p_offset = u64le(file_bytes, ph + 8)?;
        let p_vaddr = u64le(file_bytes, ph + 16)?;
        let p_filesz = u64le(file_bytes, ph + 32)?;

        let seg_end = p_offset
            .checked_add(p_filesz)
            .ok_or(LoadError::Malformed("segment extent overflows"))?;
        if seg_end > file_bytes.len() as u64 {
            return Err(LoadError::Malformed("segment out of bounds"));
        }
        p_vaddr
            .checked_add(p_filesz)
            .ok_or(LoadError::Malformed("segment vaddr overflows"))?;
        if p_filesz == 0 {
            continue;
        }
        regions.push(Region {
            name: format!("load{}", regions.len()),
            base: p_vaddr,
            bytes: file_bytes[p_offset as usize..seg_end as usize].to_vec(),
        });
    }
    Ok(regions)
}
