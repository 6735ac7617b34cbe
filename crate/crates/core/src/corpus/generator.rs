//! Program generator.
//!
//! A sample is assembled in three stages: every variable is declared first
//! (initialization), values and buffers are assigned next (allocation), and
//! the buffer access comes last (query). Lines inside the allocation stage
//! are a random interleaving of per-variable line groups whose internal
//! order is fixed, so data dependencies always hold while surface order
//! varies between samples. All identifiers are `entity_n` with `n` drawn
//! randomly per sample, independent of introduction order or type.
//!
//! Character arrays come in two surface styles: a sized stack declaration
//! (`char entity_2 [ 53 ] ;`) or a heap pair (`malloc` + `memset`).
//! Arrays sized through an int variable are always heap style, since the
//! sizing assignment has to precede the use.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AccessForm, CorpusError, GenConfig, Label, Level, ProgramSample, SampleMeta};

/// Independent random stream for one sample, derived from the corpus seed
/// and the sample index. Streams never overlap, so corpora are
/// reproducible and may be generated out of order or in parallel.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates the whole corpus described by `cfg`. Deterministic in
/// `cfg.seed`: the same config yields a byte-identical corpus.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Vec<ProgramSample>, CorpusError> {
    cfg.validate()?;
    Ok((0..cfg.num_samples)
        .map(|i| build_sample(cfg, &mut sample_rng(cfg.seed, i as u64)))
        .collect())
}

/// Generates a single sample from an already-positioned random stream
/// (see [`sample_rng`]).
pub fn generate_sample(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<ProgramSample, CorpusError> {
    cfg.validate()?;
    Ok(build_sample(cfg, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArrayStyle {
    Stack,
    Heap,
}

/// Destinations lean towards sized stack declarations and sources towards
/// heap pairs (3:1), echoing how test-suite code usually writes them; both
/// combinations still occur.
fn draw_style(rng: &mut impl Rng, stack_bias: f64) -> ArrayStyle {
    if rng.gen_bool(stack_bias) {
        ArrayStyle::Stack
    } else {
        ArrayStyle::Heap
    }
}

/// Kinds of filler variables. Dummies are initialized and allocated
/// exactly like the variables the query actually depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DummyKind {
    Int,
    Char,
    ArrayStack,
    ArrayHeap,
    ArrayIndirect,
    ArrayIndirectRealloc,
}

impl DummyKind {
    fn lines(self) -> usize {
        match self {
            DummyKind::ArrayStack => 1,
            DummyKind::Int | DummyKind::Char => 2,
            DummyKind::ArrayHeap => 3,
            DummyKind::ArrayIndirect => 5,
            DummyKind::ArrayIndirectRealloc => 6,
        }
    }

    fn vars(self) -> usize {
        match self {
            DummyKind::ArrayIndirect | DummyKind::ArrayIndirectRealloc => 2,
            _ => 1,
        }
    }

    fn allowed(self, level: Level) -> bool {
        match self {
            DummyKind::ArrayIndirect => level >= Level::L3,
            DummyKind::ArrayIndirectRealloc => level >= Level::L4,
            _ => true,
        }
    }
}

fn entity(id: usize) -> String {
    format!("entity_{id}")
}

fn decl_int(e: &str) -> String {
    format!("int {e} ;")
}

fn decl_char(e: &str) -> String {
    format!("char {e} ;")
}

fn decl_array_ptr(e: &str) -> String {
    format!("char * {e} ;")
}

fn decl_array_sized(e: &str, size: i64) -> String {
    format!("char {e} [ {size} ] ;")
}

fn assign_int(e: &str, v: i64) -> String {
    format!("{e} = {v} ;")
}

fn assign_char(e: &str, c: char) -> String {
    format!("{e} = '{c}' ;")
}

/// malloc/memset pair sized by `size_tok` (an integer literal or the name
/// of an int variable). The pair stays adjacent so both always see the
/// same size value.
fn alloc_pair(arr: &str, size_tok: &str) -> [String; 2] {
    [
        format!("{arr} = ( char * ) malloc ( {size_tok} ) ;"),
        format!("memset ( {arr} , 0 , {size_tok} ) ;"),
    ]
}

/// Declaration line plus allocation-stage group for a literal-sized array.
fn literal_array(
    name: &str,
    size: i64,
    style: ArrayStyle,
    decls: &mut Vec<String>,
    groups: &mut Vec<VecDeque<String>>,
) {
    match style {
        ArrayStyle::Stack => decls.push(decl_array_sized(name, size)),
        ArrayStyle::Heap => {
            decls.push(decl_array_ptr(name));
            groups.push(VecDeque::from(alloc_pair(name, &size.to_string()).to_vec()));
        }
    }
}

/// Allocation-stage line group for an array sized through an int variable:
/// assignment, optional decoy reassignment before or after the use, and
/// the malloc/memset pair. `effective` is the value in effect at malloc
/// time regardless of where the decoy lands.
fn indirect_group(
    arr: &str,
    size_var: &str,
    effective: i64,
    decoy: Option<(i64, bool)>,
    out: &mut VecDeque<String>,
) {
    match decoy {
        Some((v, true)) => {
            // Reallocation before use: the first value is the decoy.
            out.push_back(assign_int(size_var, v));
            out.push_back(assign_int(size_var, effective));
        }
        _ => out.push_back(assign_int(size_var, effective)),
    }
    let [m, s] = alloc_pair(arr, size_var);
    out.push_back(m);
    out.push_back(s);
    if let Some((v, false)) = decoy {
        out.push_back(assign_int(size_var, v));
    }
}

fn draw_int(rng: &mut impl Rng, lo: i64, hi: i64) -> i64 {
    rng.gen_range(lo..=hi)
}

fn draw_char(rng: &mut impl Rng) -> char {
    (b'a' + rng.gen_range(0..26u8)) as char
}

/// Draws a decoy value distinct from `taken`.
fn draw_decoy(rng: &mut impl Rng, lo: i64, hi: i64, taken: i64) -> i64 {
    loop {
        let v = draw_int(rng, lo, hi);
        if v != taken {
            return v;
        }
    }
}

fn build_sample(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> ProgramSample {
    let (lo, hi) = cfg.int_range;
    let label = if rng.gen_bool(cfg.safe_ratio) {
        Label::Safe
    } else {
        Label::Unsafe
    };

    // Constructs are sampled uniformly from everything the level permits,
    // so a level-4 corpus mixes all four levels' shapes while a level-1
    // corpus stays within direct literal-sized accesses.
    let form = if cfg.level >= Level::L2 {
        *[AccessForm::Direct, AccessForm::Strcpy, AccessForm::Memcpy]
            .choose(rng)
            .unwrap()
    } else {
        AccessForm::Direct
    };
    let indirect = cfg.level >= Level::L3 && rng.gen_bool(0.5);
    let realloc = cfg.level >= Level::L4 && indirect && rng.gen_bool(0.5);

    // Sizes are drawn by rejection from the full integer range so that the
    // pair is uniform over the region matching the chosen label.
    let (dest_size, access_size) = loop {
        let dest = draw_int(rng, lo, hi);
        let access = draw_int(rng, lo, hi);
        let is_safe = match form {
            AccessForm::Direct => access < dest,
            AccessForm::Strcpy | AccessForm::Memcpy => access <= dest,
        };
        if is_safe == (label == Label::Safe) {
            break (dest, access);
        }
    };
    // memcpy reads access_size bytes from the source, which is sized to
    // hold them; only the destination bound decides the label.
    let src_size = match form {
        AccessForm::Direct => 0,
        AccessForm::Strcpy => access_size,
        AccessForm::Memcpy => draw_int(rng, access_size, hi),
    };

    let needs_idx = form == AccessForm::Direct;
    let needs_src = form != AccessForm::Direct;
    let dest_style = if indirect {
        ArrayStyle::Heap
    } else {
        draw_style(rng, 0.75)
    };
    let src_style = draw_style(rng, 0.25);
    let protagonist_vars =
        1 + usize::from(needs_idx) + usize::from(needs_src) + usize::from(indirect);

    // Dummy plan: fill towards a target length without exceeding the
    // variable budget.
    let protagonist_lines = {
        let decls = protagonist_vars;
        let dest_alloc = if indirect {
            3 + usize::from(realloc)
        } else if dest_style == ArrayStyle::Heap {
            2
        } else {
            0
        };
        let src_alloc = if needs_src && src_style == ArrayStyle::Heap {
            2
        } else {
            0
        };
        decls + dest_alloc + src_alloc + usize::from(needs_idx) + 1
    };
    let target_lines = rng.gen_range(10..=30usize);
    let mut dummy_kinds = Vec::new();
    let mut line_budget = target_lines.saturating_sub(protagonist_lines);
    let mut var_budget = cfg.max_dummy_vars;
    loop {
        let candidates: Vec<DummyKind> = [
            DummyKind::Int,
            DummyKind::Char,
            DummyKind::ArrayStack,
            DummyKind::ArrayHeap,
            DummyKind::ArrayIndirect,
            DummyKind::ArrayIndirectRealloc,
        ]
        .into_iter()
        .filter(|k| k.allowed(cfg.level) && k.lines() <= line_budget && k.vars() <= var_budget)
        .collect();
        let Some(kind) = candidates.choose(rng).copied() else {
            break;
        };
        line_budget -= kind.lines();
        var_budget -= kind.vars();
        dummy_kinds.push(kind);
    }
    // The shortest protagonist shapes need help from the fillers to reach
    // the minimum program length; grow stack dummies into heap ones.
    let mut planned =
        protagonist_lines + dummy_kinds.iter().map(|k| k.lines()).sum::<usize>();
    for kind in dummy_kinds.iter_mut() {
        if planned >= 8 {
            break;
        }
        if *kind == DummyKind::ArrayStack {
            *kind = DummyKind::ArrayHeap;
            planned += 2;
        }
    }

    // Random distinct entity ids for every variable.
    let dummy_vars: usize = dummy_kinds.iter().map(|k| k.vars()).sum();
    let ids = rand::seq::index::sample(rng, cfg.max_entities + 1, protagonist_vars + dummy_vars);
    let mut ids = ids.iter();
    let mut next_id = || entity(ids.next().expect("id budget validated"));

    let dest = next_id();
    let idx_var = needs_idx.then(&mut next_id);
    let src = needs_src.then(&mut next_id);
    let size_var = indirect.then(&mut next_id);

    let mut decls = Vec::new();
    let mut groups: Vec<VecDeque<String>> = Vec::new();

    if let Some(size_var) = &size_var {
        decls.push(decl_array_ptr(&dest));
        decls.push(decl_int(size_var));
        let decoy = realloc.then(|| (draw_decoy(rng, lo, hi, dest_size), rng.gen_bool(0.5)));
        let mut dest_group = VecDeque::new();
        indirect_group(&dest, size_var, dest_size, decoy, &mut dest_group);
        groups.push(dest_group);
    } else {
        literal_array(&dest, dest_size, dest_style, &mut decls, &mut groups);
    }

    if let Some(idx_var) = &idx_var {
        decls.push(decl_int(idx_var));
        groups.push(VecDeque::from([assign_int(idx_var, access_size)]));
    }
    if let Some(src) = &src {
        literal_array(src, src_size, src_style, &mut decls, &mut groups);
    }

    for kind in &dummy_kinds {
        match kind {
            DummyKind::Int => {
                let e = next_id();
                decls.push(decl_int(&e));
                groups.push(VecDeque::from([assign_int(&e, draw_int(rng, lo, hi))]));
            }
            DummyKind::Char => {
                let e = next_id();
                decls.push(decl_char(&e));
                groups.push(VecDeque::from([assign_char(&e, draw_char(rng))]));
            }
            DummyKind::ArrayStack | DummyKind::ArrayHeap => {
                let e = next_id();
                let style = if *kind == DummyKind::ArrayStack {
                    ArrayStyle::Stack
                } else {
                    ArrayStyle::Heap
                };
                literal_array(&e, draw_int(rng, lo, hi), style, &mut decls, &mut groups);
            }
            DummyKind::ArrayIndirect | DummyKind::ArrayIndirectRealloc => {
                let arr = next_id();
                let var = next_id();
                decls.push(decl_array_ptr(&arr));
                decls.push(decl_int(&var));
                let size = draw_int(rng, lo, hi);
                let decoy = (*kind == DummyKind::ArrayIndirectRealloc)
                    .then(|| (draw_int(rng, lo, hi), rng.gen_bool(0.5)));
                let mut group = VecDeque::new();
                indirect_group(&arr, &var, size, decoy, &mut group);
                groups.push(group);
            }
        }
    }

    decls.shuffle(rng);
    let mut story = decls;
    riffle_into(rng, groups, &mut story);

    let query = match form {
        AccessForm::Direct => {
            format!("{dest} [ {} ] = 'x' ;", idx_var.as_ref().unwrap())
        }
        AccessForm::Strcpy => format!("strcpy ( {dest} , {} ) ;", src.as_ref().unwrap()),
        AccessForm::Memcpy => {
            format!("memcpy ( {dest} , {} , {access_size} ) ;", src.as_ref().unwrap())
        }
    };

    debug_assert!(story.len() + 1 >= 8 && story.len() <= 30);

    let dest_entity = dest
        .strip_prefix("entity_")
        .and_then(|s| s.parse().ok())
        .unwrap();
    ProgramSample {
        story,
        query,
        label,
        meta: SampleMeta {
            level: cfg.level,
            dest_size,
            access_size,
            dest_entity,
            access_form: form,
            used_indirect_alloc: indirect,
            used_realloc: realloc,
        },
    }
}

/// Appends a random interleaving of the groups to `out`, preserving each
/// group's internal order.
fn riffle_into(rng: &mut impl Rng, mut groups: Vec<VecDeque<String>>, out: &mut Vec<String>) {
    groups.retain(|g| !g.is_empty());
    while !groups.is_empty() {
        let i = rng.gen_range(0..groups.len());
        out.push(groups[i].pop_front().unwrap());
        if groups[i].is_empty() {
            groups.swap_remove(i);
        }
    }
}
