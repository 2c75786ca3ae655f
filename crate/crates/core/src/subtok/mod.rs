//! Subword vocabulary, tokenization with `[CLS]`/`[SEP]` framing, and the
//! alignment used to fold subtoken attention back onto lexer tokens.

mod align;
mod vocab;

pub use align::{
    aggregate_attention, aggregate_hidden, tokenize, tokenize_pair, AlignmentMap, Encoding, Unit,
    UnitKind,
};
pub use vocab::{
    train_vocab, Vocab, CLS_ID, CONTINUATION, MASK_ID, NUM_RESERVED, PAD_ID, RESERVED, SEP_ID,
    UNK_ID,
};
