//! Self-contained byte-level decoder-only transformer: tokenization,
//! forward pass, training and finetuning, quantization, decoding, and
//! the input one-hot gradient that discrete prompt search consumes.

mod backprop;
mod checkpoint;
mod grad;
mod model;
mod train;
mod vocab;

pub use checkpoint::{Checkpoint, ModelConfig, Tensor};
pub use grad::{input_onehot_gradient, relaxed_prompt_nll};
pub use model::{
    bottom_k_next, forward, greedy_decode, next_token_logits, nll, perplexity, perplexity_tokens,
    sample_decode,
};
pub use train::{init_checkpoint, lora_finetune, sft_finetune, train, TrainConfig};
pub use vocab::{
    detokenize, template, template_prompt_offset, tokenize, TokenId, BOS, EOS, INST_CLOSE,
    INST_OPEN, SYS_CLOSE, SYS_OPEN, VOCAB_SIZE,
};

pub(crate) use model::{bottom_order, forward_block, log_softmax_pick, KvCache, ModelView};
pub(crate) use train::{framed_example, Trainer};
