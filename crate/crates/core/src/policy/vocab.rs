use crate::chart::{Quantity, TargetSpec};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const THINK_OPEN: usize = 2;
pub const THINK_CLOSE: usize = 3;
pub const ANSWER_OPEN: usize = 4;
pub const ANSWER_CLOSE: usize = 5;
pub const CONFIDENCE_OPEN: usize = 6;
pub const CONFIDENCE_CLOSE: usize = 7;
pub const UP: usize = 8;
pub const DOWN: usize = 9;
pub const DIGIT_0: usize = 10;
pub const FILLER_0: usize = 20;
pub const FILLER_COUNT: usize = 16;
pub const QUANTITY_PRICE: usize = 36;
pub const QUANTITY_VOLATILITY: usize = 37;
pub const HORIZON_5: usize = 38;
pub const HORIZON_21: usize = 39;
pub const HORIZON_63: usize = 40;
pub const VOCAB_SIZE: usize = 41;

const STRUCTURAL: [&str; 8] = [
    "<pad>",
    "<eos>",
    "<think>",
    "</think>",
    "<answer>",
    "</answer>",
    "<confidence>",
    "</confidence>",
];

pub fn is_digit(id: usize) -> bool {
    (DIGIT_0..DIGIT_0 + 10).contains(&id)
}

pub fn digit_value(id: usize) -> Option<u32> {
    is_digit(id).then(|| (id - DIGIT_0) as u32)
}

pub fn digit(value: u32) -> usize {
    assert!(value < 10);
    DIGIT_0 + value as usize
}

pub fn is_filler(id: usize) -> bool {
    (FILLER_0..FILLER_0 + FILLER_COUNT).contains(&id)
}

/// Two conditioning tokens that open every decoder input.
pub fn target_tokens(target: TargetSpec) -> [usize; 2] {
    let q = match target.quantity {
        Quantity::Price => QUANTITY_PRICE,
        Quantity::Volatility => QUANTITY_VOLATILITY,
    };
    let h = match target.horizon {
        5 => HORIZON_5,
        21 => HORIZON_21,
        _ => HORIZON_63,
    };
    [q, h]
}

pub fn token_name(id: usize) -> String {
    match id {
        _ if id < STRUCTURAL.len() => STRUCTURAL[id].to_string(),
        UP => "up".into(),
        DOWN => "down".into(),
        _ if is_digit(id) => (id - DIGIT_0).to_string(),
        _ if is_filler(id) => format!("f{}", id - FILLER_0),
        QUANTITY_PRICE => "[price]".into(),
        QUANTITY_VOLATILITY => "[volatility]".into(),
        HORIZON_5 => "[h5]".into(),
        HORIZON_21 => "[h21]".into(),
        HORIZON_63 => "[h63]".into(),
        _ => format!("<unk:{id}>"),
    }
}

pub fn render_tokens(ids: &[usize]) -> String {
    ids.iter()
        .map(|&t| token_name(t))
        .collect::<Vec<_>>()
        .join(" ")
}
