//! gadgetscope-core: code-reuse gadget analysis and layout-level mitigation.
//!
//! The crate is organized around three workflows:
//!
//! * **scan** — harvest ROP/JOP/COP gadgets from executable bytes
//!   ([`region`], [`insn`], [`scan`]) and compute gadget-set security
//!   metrics ([`metrics`]);
//! * **compare** — diff a baseline gadget set against a variant
//!   ([`diff`]);
//! * **transform** — apply layout-level mitigation passes to a program
//!   listing and re-scan the result ([`layout`], [`passes`]).

pub mod diff;
pub mod insn;
pub mod layout;
pub mod metrics;
pub mod passes;
pub mod region;
pub mod scan;

pub use passes::{
    merge_indirect_jumps, merge_returns, parse_pass_list, reorder_functions, run_pipeline,
    sled_jump_displacements, widen_boundaries, PassLimits, PassName, PassStats, PipelineError,
    Termination, UnknownPass, DEFAULT_PASS_ORDER,
};

pub use layout::{
    assemble, assemble_detailed, find_problematic_displacements, parse_listing, render_listing,
    scan_boundary_gpis, AssembleError, BoundarySite, DispFieldKind, FunctionLayout, LayoutInsn,
    LayoutProgram, ParseError, ProblemSite, SymbolicTarget,
};

pub use diff::{compare, introduction_rate, render_report, DiffReport, OutputFormat};
pub use metrics::{
    classify_special, expressivity, score_quality, set_quality, special_purpose, ClassRuleTable,
    ConfigError, ExpressivityProfile, QualitySummary, ScoreTable, SpAvailability, SpKind,
};
pub use insn::{
    classify_gpi, decode_instruction, gpi_byte_patterns, is_privileged, DecodeError, GpiGroup,
    GpiKind, GpiPattern, Instruction, InstructionDecoder, Mnemonic, Operand, SubsetDecoder,
};
pub use region::{load_elf_exec_regions, load_raw_region, LoadError, Region};
pub use scan::{
    filter_useful, find_gpi_sites, harvest_gadgets, Gadget, GadgetSet, GpiSite, ScanConfig,
};
