//! Syntactic construct scan, used to check that a corpus stays within its
//! level's vocabulary of constructs.

use std::collections::HashMap;

use super::{Level, ProgramSample};

/// Which level-gated constructs appear in a sample, detected purely from
/// the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstructScan {
    pub copy_query: bool,
    pub var_sized_alloc: bool,
    pub int_reassignment: bool,
}

pub fn scan_constructs(sample: &ProgramSample) -> ConstructScan {
    let copy_query = sample.query.starts_with("strcpy (") || sample.query.starts_with("memcpy (");

    let mut var_sized_alloc = false;
    let mut assign_counts: HashMap<&str, usize> = HashMap::new();
    for line in &sample.story {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if let [_, "=", "(", "char", "*", ")", "malloc", "(", size, ")", ";"] = toks.as_slice() {
            if size.parse::<i64>().is_err() {
                var_sized_alloc = true;
            }
        }
        if let ["char", _, "[", size, "]", ";"] = toks.as_slice() {
            if size.parse::<i64>().is_err() {
                var_sized_alloc = true;
            }
        }
        if let [name, "=", value, ";"] = toks.as_slice() {
            if value.parse::<i64>().is_ok() {
                *assign_counts.entry(name).or_default() += 1;
            }
        }
    }
    let int_reassignment = assign_counts.values().any(|&c| c >= 2);

    ConstructScan {
        copy_query,
        var_sized_alloc,
        int_reassignment,
    }
}

/// The lowest level whose construct set covers the scan.
pub fn min_level(scan: ConstructScan) -> Level {
    if scan.int_reassignment {
        Level::L4
    } else if scan.var_sized_alloc {
        Level::L3
    } else if scan.copy_query {
        Level::L2
    } else {
        Level::L1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenConfig};

    #[test]
    fn corpora_respect_level_containment() {
        for level in Level::ALL {
            let cfg = GenConfig {
                level,
                num_samples: 300,
                seed: 31,
                ..GenConfig::default()
            };
            for sample in generate_corpus(&cfg).unwrap() {
                let needed = min_level(scan_constructs(&sample));
                assert!(
                    needed <= level,
                    "{level} sample needs {needed}: {:?}",
                    sample.story
                );
            }
        }
    }

    #[test]
    fn every_construct_eventually_appears_at_its_level() {
        let cfg = GenConfig {
            level: Level::L4,
            num_samples: 500,
            seed: 32,
            ..GenConfig::default()
        };
        let scans: Vec<ConstructScan> = generate_corpus(&cfg)
            .unwrap()
            .iter()
            .map(scan_constructs)
            .collect();
        assert!(scans.iter().any(|s| s.copy_query));
        assert!(scans.iter().any(|s| s.var_sized_alloc));
        assert!(scans.iter().any(|s| s.int_reassignment));
        assert!(scans.iter().any(|s| !s.copy_query && !s.var_sized_alloc));
    }
}
