//! Gadget harvesting: locate every GPI byte pattern in a region, sweep the
//! preceding bytes for valid instruction prefixes up to a byte threshold,
//! collect multi-branch gadgets, deduplicate by normalized text, and filter
//! to useful gadgets.

use crate::insn::{
    classify_gpi, is_privileged, match_gpi_at_with, GpiKind, GpiPattern, Instruction,
    InstructionDecoder, Mnemonic, SubsetDecoder,
};
use crate::region::Region;
use std::collections::BTreeMap;

/// A GPI occurrence within a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GpiSite {
    /// Byte index of the pattern start in the region.
    pub offset: usize,
    /// The matched pattern: kind plus the actual bytes at `offset`.
    pub pattern: GpiPattern,
}

/// An instruction sequence ending in a GPI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gadget {
    /// Virtual address of the first instruction.
    pub address: u64,
    /// Non-empty; the last instruction is the GPI.
    pub instructions: Vec<Instruction>,
    pub gpi: GpiKind,
    /// True iff a non-terminal instruction is a direct jump (conditional or
    /// unconditional).
    pub multi_branch: bool,
    /// Canonical address-elided text, e.g. `"pop rbx; ret;"`.
    pub normalized_key: String,
}

impl Gadget {
    fn new(address: u64, instructions: Vec<Instruction>, gpi: GpiKind) -> Self {
        let multi_branch = instructions[..instructions.len() - 1]
            .iter()
            .any(|i| i.is_direct_jump());
        let normalized_key = normalize_instructions(&instructions);
        Gadget { address, instructions, gpi, multi_branch, normalized_key }
    }

    /// All instructions before the GPI.
    pub fn body(&self) -> &[Instruction] {
        &self.instructions[..self.instructions.len() - 1]
    }

    /// The terminating GPI instruction.
    pub fn terminator(&self) -> &Instruction {
        self.instructions.last().expect("gadget is non-empty")
    }
}

/// Renders an instruction sequence as its normalized gadget key.
pub fn normalize_instructions(instructions: &[Instruction]) -> String {
    let mut out = String::new();
    for insn in instructions {
        out.push_str(&insn.text());
        out.push(';');
        out.push(' ');
    }
    out.pop();
    out
}

/// Canonical address-elided key of a gadget.
pub fn normalize_gadget(g: &Gadget) -> String {
    normalize_instructions(&g.instructions)
}

/// Deduplicated collection of gadgets, unique by normalized key.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GadgetSet {
    gadgets: BTreeMap<String, Gadget>,
    /// Where the gadgets came from (region names).
    pub provenance: Vec<String>,
}

impl GadgetSet {
    pub fn new(provenance: Vec<String>) -> Self {
        GadgetSet { gadgets: BTreeMap::new(), provenance }
    }

    /// Inserts a gadget, keeping the lowest address on key collisions.
    pub fn insert(&mut self, gadget: Gadget) {
        match self.gadgets.get_mut(&gadget.normalized_key) {
            Some(existing) => {
                if gadget.address < existing.address {
                    *existing = gadget;
                }
            }
            None => {
                self.gadgets.insert(gadget.normalized_key.clone(), gadget);
            }
        }
    }

    /// Gadgets in normalized-key order.
    pub fn iter(&self) -> impl Iterator<Item = &Gadget> {
        self.gadgets.values()
    }

    pub fn len(&self) -> usize {
        self.gadgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gadgets.is_empty()
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.gadgets.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.gadgets.keys().map(|k| k.as_str())
    }

    /// Merges another set in, keeping lowest addresses.
    pub fn merge(&mut self, other: GadgetSet) {
        for (_, g) in other.gadgets {
            self.insert(g);
        }
        self.provenance.extend(other.provenance);
    }
}

/// Scanner configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    /// Maximum byte length of the instructions preceding the GPI.
    pub max_prefix_bytes: usize,
    pub include_multi_branch: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { max_prefix_bytes: 10, include_multi_branch: true }
    }
}

/// Every offset at which a GPI terminator encoding begins, including
/// overlapping occurrences and occurrences inside other instructions'
/// encodings. Sorted by offset.
pub fn find_gpi_sites(region: &Region) -> Vec<GpiSite> {
    find_gpi_sites_with(&SubsetDecoder, region)
}

/// [`find_gpi_sites`] with an explicit decoder.
pub fn find_gpi_sites_with<D: InstructionDecoder + ?Sized>(
    decoder: &D,
    region: &Region,
) -> Vec<GpiSite> {
    let mut sites = Vec::new();
    for offset in 0..region.bytes.len() {
        if let Some(m) = match_gpi_at_with(decoder, &region.bytes, offset) {
            sites.push(GpiSite {
                offset,
                pattern: GpiPattern {
                    kind: m.kind,
                    bytes: region.bytes[offset..offset + m.len].to_vec(),
                },
            });
        }
    }
    sites
}

/// Why a candidate instruction may not appear in a gadget body: it is itself
/// a GPI, or it is control flow other than a direct jump (direct calls, far
/// jumps, software interrupts, iret).
fn rejects_as_intermediate(insn: &Instruction) -> bool {
    if classify_gpi(insn).is_some() {
        return true;
    }
    if insn.is_direct_jump() {
        return false;
    }
    matches!(
        insn.mnemonic,
        Mnemonic::Call | Mnemonic::CallFar | Mnemonic::JmpFar | Mnemonic::Int | Mnemonic::Iret
    )
}

/// Harvests the gadget set of a region: for every GPI site, every start
/// offset within `max_prefix_bytes` whose linear decode lands exactly on the
/// site with a clean body produces a gadget. The bare GPI is always produced.
pub fn harvest_gadgets(region: &Region, cfg: &ScanConfig) -> GadgetSet {
    harvest_gadgets_with(&SubsetDecoder, region, cfg)
}

/// [`harvest_gadgets`] with an explicit decoder.
pub fn harvest_gadgets_with<D: InstructionDecoder + ?Sized>(
    decoder: &D,
    region: &Region,
    cfg: &ScanConfig,
) -> GadgetSet {
    let mut set = GadgetSet::new(vec![region.name.clone()]);
    for site in find_gpi_sites_with(decoder, region) {
        let gpi_insn = decoder
            .decode(&region.bytes, site.offset)
            .expect("site offset decodes by construction");
        let lo = site.offset.saturating_sub(cfg.max_prefix_bytes);
        for start in lo..=site.offset {
            if let Some(body) = decode_body(decoder, &region.bytes, start, site.offset) {
                let multi_branch = body.iter().any(|i| i.is_direct_jump());
                if multi_branch && !cfg.include_multi_branch {
                    continue;
                }
                let mut instructions = body;
                instructions.push(gpi_insn.clone());
                set.insert(Gadget::new(
                    region.base + start as u64,
                    instructions,
                    site.pattern.kind,
                ));
            }
        }
    }
    set
}

/// Linearly decodes `[start, gpi_offset)` into a gadget body. Returns `None`
/// unless every instruction decodes, the walk lands exactly on the GPI
/// offset, and no instruction is rejected as an intermediate.
fn decode_body<D: InstructionDecoder + ?Sized>(
    decoder: &D,
    bytes: &[u8],
    start: usize,
    gpi_offset: usize,
) -> Option<Vec<Instruction>> {
    let mut body = Vec::new();
    let mut pos = start;
    while pos < gpi_offset {
        let insn = decoder.decode(bytes, pos).ok()?;
        pos += insn.length();
        if pos > gpi_offset || rejects_as_intermediate(&insn) {
            return None;
        }
        body.push(insn);
    }
    Some(body)
}

/// Filters to useful gadgets: drops gadgets containing privileged
/// instructions and gadgets whose whole body is nops. The bare GPI gadget is
/// retained.
pub fn filter_useful(set: &GadgetSet) -> GadgetSet {
    let mut out = GadgetSet::new(set.provenance.clone());
    for gadget in set.iter() {
        if gadget.instructions.iter().any(is_privileged) {
            continue;
        }
        let body = gadget.body();
        if !body.is_empty() && body.iter().all(|i| i.mnemonic == Mnemonic::Nop) {
            continue;
        }
        out.insert(gadget.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insn::GpiKind;
    use crate::region::load_raw_region;

    fn raw(bytes: &[u8], base: u64) -> Region {
        load_raw_region(bytes, base).unwrap()
    }

    fn keys(set: &GadgetSet) -> Vec<String> {
        set.keys().map(str::to_string).collect()
    }

    #[test]
    fn sites_in_worked_example() {
        let sites = find_gpi_sites(&raw(&[0x83, 0xC0, 0x5B, 0xC3], 0));
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].offset, 3);
        assert_eq!(sites[0].pattern.kind, GpiKind::Retn);
        assert_eq!(sites[0].pattern.bytes, vec![0xC3]);
    }

    #[test]
    fn sites_across_boundary() {
        let sites = find_gpi_sites(&raw(&[0x74, 0xCD, 0x80, 0x4B, 0x04, 0x02], 0));
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].offset, 1);
        assert_eq!(sites[0].pattern.kind, GpiKind::Int80);
    }

    #[test]
    fn sites_none() {
        assert!(find_gpi_sites(&raw(&[0x90, 0x90, 0x90], 0)).is_empty());
    }

    #[test]
    fn sites_overlapping() {
        // C2 C3 C3: ret-imm at 0 covering two more ret sites.
        let sites = find_gpi_sites(&raw(&[0xC2, 0xC3, 0xC3], 0));
        let got: Vec<_> = sites.iter().map(|s| (s.offset, s.pattern.kind)).collect();
        assert_eq!(
            got,
            vec![(0, GpiKind::RetnImm), (1, GpiKind::Retn), (2, GpiKind::Retn)]
        );
    }

    #[test]
    fn harvest_worked_example() {
        let set = harvest_gadgets(&raw(&[0x83, 0xC0, 0x5B, 0xC3], 0x1000), &ScanConfig::default());
        assert_eq!(
            keys(&set),
            vec!["add eax, 0x5b; ret;", "pop rbx; ret;", "ret;"]
        );
        let by_key: BTreeMap<_, _> = set.iter().map(|g| (g.normalized_key.clone(), g)).collect();
        assert_eq!(by_key["add eax, 0x5b; ret;"].address, 0x1000);
        assert_eq!(by_key["pop rbx; ret;"].address, 0x1002);
        assert_eq!(by_key["ret;"].address, 0x1003);
    }

    #[test]
    fn harvest_bare_gpi() {
        let set = harvest_gadgets(&raw(&[0xC3], 0), &ScanConfig::default());
        assert_eq!(keys(&set), vec!["ret;"]);
    }

    #[test]
    fn harvest_rejects_intermediate_gpis_and_calls() {
        // ret; ret — sweep from the first ret may not run through it.
        let set = harvest_gadgets(&raw(&[0xC3, 0xC3], 0), &ScanConfig::default());
        assert_eq!(keys(&set), vec!["ret;"]);
        // call rel32 as body is rejected; bare ret remains.
        let set = harvest_gadgets(&raw(&[0xE8, 0, 0, 0, 0, 0xC3], 0), &ScanConfig::default());
        assert!(keys(&set).contains(&"ret;".to_string()));
        assert!(set.iter().all(|g| !g.normalized_key.contains("call")));
    }

    #[test]
    fn harvest_multi_branch() {
        // je +0x10; pop rbx; ret
        let region = raw(&[0x74, 0x10, 0x5B, 0xC3], 0);
        let set = harvest_gadgets(&region, &ScanConfig::default());
        let mb: Vec<_> = set.iter().filter(|g| g.multi_branch).collect();
        assert_eq!(mb.len(), 1);
        assert_eq!(mb[0].normalized_key, "je +0x10; pop rbx; ret;");

        let cfg = ScanConfig { include_multi_branch: false, ..Default::default() };
        let set = harvest_gadgets(&region, &cfg);
        assert!(set.iter().all(|g| !g.multi_branch));
    }

    #[test]
    fn harvest_respects_prefix_threshold() {
        // Nine nops then ret: with the default 10-byte budget every suffix fits.
        let mut bytes = vec![0x90; 9];
        bytes.push(0xC3);
        let set = harvest_gadgets(&raw(&bytes, 0), &ScanConfig::default());
        assert_eq!(set.len(), 10);
        let cfg = ScanConfig { max_prefix_bytes: 3, ..Default::default() };
        let set = harvest_gadgets(&raw(&bytes, 0), &cfg);
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn dedup_keeps_lowest_address() {
        // Two identical pop rbx; ret sequences.
        let set = harvest_gadgets(&raw(&[0x5B, 0xC3, 0x5B, 0xC3], 0x100), &ScanConfig::default());
        let g = set.iter().find(|g| g.normalized_key == "pop rbx; ret;").unwrap();
        assert_eq!(g.address, 0x100);
    }

    #[test]
    fn gadget_bytes_appear_verbatim() {
        let region = raw(&[0x83, 0xC0, 0x5B, 0xC3, 0x74, 0xFC, 0x5B, 0xC3], 0x2000);
        let set = harvest_gadgets(&region, &ScanConfig::default());
        for g in set.iter() {
            let start = (g.address - region.base) as usize;
            let cat: Vec<u8> = g.instructions.iter().flat_map(|i| i.bytes.clone()).collect();
            assert_eq!(&region.bytes[start..start + cat.len()], &cat[..]);
        }
    }

    #[test]
    fn filter_rules() {
        // hlt; ret — privileged body removed.
        let set = harvest_gadgets(&raw(&[0xF4, 0xC3], 0), &ScanConfig::default());
        let useful = filter_useful(&set);
        assert_eq!(keys(&useful), vec!["ret;"]);

        // nop; nop; ret — nop-only bodies removed, bare ret retained.
        let set = harvest_gadgets(&raw(&[0x90, 0x90, 0xC3], 0), &ScanConfig::default());
        let useful = filter_useful(&set);
        assert_eq!(keys(&useful), vec!["ret;"]);

        // pop rbx; ret retained.
        let set = harvest_gadgets(&raw(&[0x5B, 0xC3], 0), &ScanConfig::default());
        let useful = filter_useful(&set);
        assert_eq!(keys(&useful), vec!["pop rbx; ret;", "ret;"]);
    }

    #[test]
    fn normalized_key_is_location_invariant() {
        let a = harvest_gadgets(&raw(&[0x5B, 0xC3], 0x1002), &ScanConfig::default());
        let b = harvest_gadgets(&raw(&[0x5B, 0xC3], 0x9000), &ScanConfig::default());
        assert_eq!(keys(&a), keys(&b));
    }

    #[test]
    fn harvest_idempotent() {
        let region = raw(&[0x83, 0xC0, 0x5B, 0xC3, 0xCD, 0x80], 0);
        let a = harvest_gadgets(&region, &ScanConfig::default());
        let b = harvest_gadgets(&region, &ScanConfig::default());
        assert_eq!(a, b);
    }
}
