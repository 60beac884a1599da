//! Reserved token ids, fixed across every vocabulary.

pub type TokenId = usize;

pub const PAD_ID: TokenId = 0;
pub const START_ID: TokenId = 1;
pub const END_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const UNK_ID: TokenId = 4;

pub const RESERVED: [(&str, TokenId); 5] = [
    ("<pad>", PAD_ID),
    ("<s>", START_ID),
    ("</s>", END_ID),
    ("<sep>", SEP_ID),
    ("<unk>", UNK_ID),
];
