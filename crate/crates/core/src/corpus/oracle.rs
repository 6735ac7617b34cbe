//! Independent execution oracle.
//!
//! Walks a sample's lines top to bottom, tracking integer values and
//! buffer sizes, and decides the query's safety from that state alone. It
//! never looks at the generation metadata, so agreement with the
//! generator's label is a real cross-check rather than a tautology.

use std::collections::HashMap;

use thiserror::Error;

use super::{Label, ProgramSample};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("unsupported construct: `{0}`")]
    UnsupportedConstruct(String),
    #[error("variable `{0}` used before declaration or assignment")]
    UndefinedVariable(String),
    #[error("`{0}` accessed as a buffer but never allocated")]
    UnallocatedBuffer(String),
}

#[derive(Default)]
struct State {
    ints: HashMap<String, Option<i64>>,
    chars: HashMap<String, Option<char>>,
    /// Declared arrays; the value is the allocated size once malloc'd.
    arrays: HashMap<String, Option<i64>>,
}

impl State {
    fn int_value(&self, name: &str) -> Result<i64, OracleError> {
        self.ints
            .get(name)
            .copied()
            .flatten()
            .ok_or_else(|| OracleError::UndefinedVariable(name.to_string()))
    }

    fn array_size(&self, name: &str) -> Result<i64, OracleError> {
        self.arrays
            .get(name)
            .copied()
            .flatten()
            .ok_or_else(|| OracleError::UnallocatedBuffer(name.to_string()))
    }

    /// A size operand is either an integer literal or an int variable.
    fn eval_size(&self, tok: &str) -> Result<i64, OracleError> {
        match tok.parse::<i64>() {
            Ok(v) => Ok(v),
            Err(_) => self.int_value(tok),
        }
    }
}

fn is_char_literal(tok: &str) -> bool {
    tok.len() == 3 && tok.starts_with('\'') && tok.ends_with('\'')
}

/// Re-derives a sample's label by interpreting its lines.
pub fn oracle_label(sample: &ProgramSample) -> Result<Label, OracleError> {
    let mut state = State::default();
    for line in &sample.story {
        execute(line, &mut state)?;
    }
    query_label(&sample.query, &state)
}

fn execute(line: &str, state: &mut State) -> Result<(), OracleError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let unsupported = || OracleError::UnsupportedConstruct(line.to_string());

    match toks.as_slice() {
        ["int", name, ";"] => {
            state.ints.insert(name.to_string(), None);
        }
        ["char", name, ";"] => {
            state.chars.insert(name.to_string(), None);
        }
        ["char", "*", name, ";"] => {
            state.arrays.insert(name.to_string(), None);
        }
        // Sized stack declaration: allocated on the spot.
        ["char", name, "[", size, "]", ";"] => {
            let bytes = state.eval_size(size)?;
            state.arrays.insert(name.to_string(), Some(bytes));
        }
        [name, "=", "(", "char", "*", ")", "malloc", "(", size, ")", ";"] => {
            let bytes = state.eval_size(size)?;
            if !state.arrays.contains_key(*name) {
                return Err(OracleError::UndefinedVariable(name.to_string()));
            }
            state.arrays.insert(name.to_string(), Some(bytes));
        }
        ["memset", "(", name, ",", "0", ",", size, ")", ";"] => {
            state.array_size(name)?;
            state.eval_size(size)?;
        }
        [name, "=", value, ";"] => {
            if let Ok(v) = value.parse::<i64>() {
                if !state.ints.contains_key(*name) {
                    return Err(OracleError::UndefinedVariable(name.to_string()));
                }
                state.ints.insert(name.to_string(), Some(v));
            } else if is_char_literal(value) {
                if !state.chars.contains_key(*name) {
                    return Err(OracleError::UndefinedVariable(name.to_string()));
                }
                state
                    .chars
                    .insert(name.to_string(), value.chars().nth(1));
            } else {
                return Err(unsupported());
            }
        }
        _ => return Err(unsupported()),
    }
    Ok(())
}

fn query_label(query: &str, state: &State) -> Result<Label, OracleError> {
    let toks: Vec<&str> = query.split_whitespace().collect();

    let verdict = |out_of_bounds: bool| {
        if out_of_bounds {
            Label::Unsafe
        } else {
            Label::Safe
        }
    };

    match toks.as_slice() {
        // entity_a [ entity_b ] = 'x' ;  -- unsafe iff the 0-based index
        // reaches or passes the allocated size.
        [dest, "[", index, "]", "=", c, ";"] if is_char_literal(c) => {
            let size = state.array_size(dest)?;
            let idx = state.int_value(index)?;
            Ok(verdict(idx >= size))
        }
        // strcpy writes the whole source buffer into the destination.
        ["strcpy", "(", dest, ",", src, ")", ";"] => {
            let dest_size = state.array_size(dest)?;
            let src_size = state.array_size(src)?;
            Ok(verdict(src_size > dest_size))
        }
        // memcpy writes exactly `len` bytes into the destination.
        ["memcpy", "(", dest, ",", src, ",", len, ")", ";"] => {
            let dest_size = state.array_size(dest)?;
            state.array_size(src)?;
            let len = state.eval_size(len)?;
            Ok(verdict(len > dest_size))
        }
        _ => Err(OracleError::UnsupportedConstruct(query.to_string())),
    }
}
