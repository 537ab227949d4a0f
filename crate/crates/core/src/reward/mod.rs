//! Rule-based rewards for the structured answer grammar
//! `<think> filler* </think> <answer> up|down </answer> <confidence> d d? d? </confidence> EOS`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::Direction;
use crate::policy::vocab::{
    digit_value, is_filler, ANSWER_CLOSE, ANSWER_OPEN, CONFIDENCE_CLOSE, CONFIDENCE_OPEN, DOWN,
    EOS, THINK_CLOSE, THINK_OPEN, UP,
};

pub const MAX_CONFIDENCE: u32 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward weight {name} = {value} must be finite and non-negative")]
    Weight { name: &'static str, value: f64 },
    #[error("length_cap must be at least 1")]
    LengthCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub w_acc: f64,
    pub w_fmt: f64,
    pub w_len: f64,
    /// Think length at which the length reward saturates.
    pub length_cap: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_acc: 1.0,
            w_fmt: 0.25,
            w_len: 0.25,
            length_cap: 16,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, value) in [
            ("w_acc", self.w_acc),
            ("w_fmt", self.w_fmt),
            ("w_len", self.w_len),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(RewardError::Weight { name, value });
            }
        }
        if self.length_cap == 0 {
            return Err(RewardError::LengthCap);
        }
        Ok(())
    }

    pub fn max_total(&self) -> f64 {
        self.w_acc + self.w_fmt + self.w_len
    }
}

/// Parse result. When `format_valid`, both `direction` and `confidence` are
/// present; otherwise they hold whatever could be recovered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParsedOutput {
    pub format_valid: bool,
    pub direction: Option<Direction>,
    pub confidence: Option<u32>,
    pub think_length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub length: f64,
    pub format: f64,
    pub total: f64,
    /// Confidence score fed to the uncertainty adjustment; 0 when invalid.
    pub score: u32,
}

fn direction_of(tok: usize) -> Option<Direction> {
    match tok {
        UP => Some(Direction::Up),
        DOWN => Some(Direction::Down),
        _ => None,
    }
}

/// Up to three digits after `start`, accepted only if the value is at most 100.
fn read_number(tokens: &[usize], start: usize) -> (Option<u32>, usize) {
    let mut value = 0u32;
    let mut n = 0;
    while n < 3 {
        match tokens.get(start + n).and_then(|&t| digit_value(t)) {
            Some(d) => {
                value = value * 10 + d;
                n += 1;
            }
            None => break,
        }
    }
    if n == 0 || value > MAX_CONFIDENCE {
        (None, n)
    } else {
        (Some(value), n)
    }
}

fn strict(tokens: &[usize]) -> bool {
    let mut i = 0;
    let expect = |tok: usize, i: &mut usize| {
        let ok = tokens.get(*i) == Some(&tok);
        *i += 1;
        ok
    };
    if !expect(THINK_OPEN, &mut i) {
        return false;
    }
    while tokens.get(i).is_some_and(|&t| is_filler(t)) {
        i += 1;
    }
    if !(expect(THINK_CLOSE, &mut i) && expect(ANSWER_OPEN, &mut i)) {
        return false;
    }
    if tokens.get(i).and_then(|&t| direction_of(t)).is_none() {
        return false;
    }
    i += 1;
    if !(expect(ANSWER_CLOSE, &mut i) && expect(CONFIDENCE_OPEN, &mut i)) {
        return false;
    }
    let (value, n) = read_number(tokens, i);
    if value.is_none() || tokens.get(i + n).is_some_and(|&t| digit_value(t).is_some()) {
        return false;
    }
    i += n;
    expect(CONFIDENCE_CLOSE, &mut i) && expect(EOS, &mut i) && i == tokens.len()
}

/// Total and deterministic. Best-effort fields come from the first
/// occurrence of each opening tag.
pub fn parse_output(tokens: &[usize]) -> ParsedOutput {
    let find = |tok: usize| tokens.iter().position(|&t| t == tok);
    let think_length = find(THINK_OPEN)
        .and_then(|open| tokens[open + 1..].iter().position(|&t| t == THINK_CLOSE))
        .unwrap_or(0);
    let direction = find(ANSWER_OPEN)
        .and_then(|a| tokens.get(a + 1))
        .and_then(|&t| direction_of(t));
    let confidence = find(CONFIDENCE_OPEN).and_then(|c| read_number(tokens, c + 1).0);
    ParsedOutput {
        format_valid: strict(tokens),
        direction,
        confidence,
        think_length,
    }
}

pub fn accuracy_reward(parsed: &ParsedOutput, label: Direction, cfg: &RewardConfig) -> f64 {
    if parsed.format_valid && parsed.direction == Some(label) {
        cfg.w_acc
    } else {
        0.0
    }
}

/// Linear ramp up to `length_cap`, flat beyond it.
pub fn length_reward(think_length: usize, cfg: &RewardConfig) -> f64 {
    cfg.w_len * think_length.min(cfg.length_cap) as f64 / cfg.length_cap as f64
}

pub fn format_reward(parsed: &ParsedOutput, cfg: &RewardConfig) -> f64 {
    if parsed.format_valid {
        cfg.w_fmt
    } else {
        0.0
    }
}

pub fn total_reward(b: &RewardBreakdown) -> f64 {
    b.accuracy + b.length + b.format
}

pub fn score_output(
    tokens: &[usize],
    label: Direction,
    cfg: &RewardConfig,
) -> (ParsedOutput, RewardBreakdown) {
    let parsed = parse_output(tokens);
    let mut b = RewardBreakdown {
        accuracy: accuracy_reward(&parsed, label, cfg),
        length: length_reward(parsed.think_length, cfg),
        format: format_reward(&parsed, cfg),
        total: 0.0,
        score: if parsed.format_valid {
            parsed.confidence.unwrap_or(0)
        } else {
            0
        },
    };
    b.total = total_reward(&b);
    (parsed, b)
}

/// Tokens of a well-formed answer.
pub fn format_answer(think: &[usize], direction: Direction, confidence: u32) -> Vec<usize> {
    use crate::policy::vocab::digit;
    assert!(confidence <= MAX_CONFIDENCE);
    let mut out = vec![THINK_OPEN];
    out.extend_from_slice(think);
    out.extend([THINK_CLOSE, ANSWER_OPEN]);
    out.push(match direction {
        Direction::Up => UP,
        Direction::Down => DOWN,
    });
    out.extend([ANSWER_CLOSE, CONFIDENCE_OPEN]);
    out.extend(
        confidence
            .to_string()
            .bytes()
            .map(|b| digit(u32::from(b - b'0'))),
    );
    out.extend([CONFIDENCE_CLOSE, EOS]);
    out
}
