use super::vocab::{Vocab, CLS, PAD, SEP};
use super::{Label, LabeledExample};

/// Padded token-id matrix `[batch, seq_len]` with its attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    /// Empty for unlabeled text.
    pub labels: Vec<Label>,
}

impl TokenizedBatch {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.token_ids[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.attention_mask[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn real_len(&self, i: usize) -> usize {
        self.mask_row(i).iter().filter(|&&m| m).count()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }

    /// Drops trailing columns that are padding in every row.
    pub fn trim_padding(&self) -> TokenizedBatch {
        let keep = (0..self.batch_size).map(|i| self.real_len(i)).max().unwrap_or(0).max(1);
        self.with_seq_len(keep)
    }

    /// Re-pads (or truncates padding) to `len` columns.
    pub fn with_seq_len(&self, len: usize) -> TokenizedBatch {
        let mut ids = Vec::with_capacity(self.batch_size * len);
        let mut mask = Vec::with_capacity(self.batch_size * len);
        for i in 0..self.batch_size {
            let (r, m) = (self.row(i), self.mask_row(i));
            for j in 0..len {
                ids.push(r.get(j).copied().unwrap_or(PAD));
                mask.push(m.get(j).copied().unwrap_or(false));
            }
        }
        TokenizedBatch {
            batch_size: self.batch_size,
            seq_len: len,
            token_ids: ids,
            attention_mask: mask,
            labels: self.labels.clone(),
        }
    }

    /// Rows `idx` in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> TokenizedBatch {
        let mut ids = Vec::with_capacity(idx.len() * self.seq_len);
        let mut mask = Vec::with_capacity(idx.len() * self.seq_len);
        for &i in idx {
            ids.extend_from_slice(self.row(i));
            mask.extend_from_slice(self.mask_row(i));
        }
        TokenizedBatch {
            batch_size: idx.len(),
            seq_len: self.seq_len,
            token_ids: ids,
            attention_mask: mask,
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.labels[i]).collect()
            },
        }
    }
}

/// `[cls] tokens [sep]`, truncated to `max_length` with `sep` kept last,
/// then padded to exactly `max_length` columns.
pub fn encode_texts<S: AsRef<str>>(texts: &[S], vocab: &Vocab, max_length: usize) -> TokenizedBatch {
    assert!(max_length >= 2, "max_length must leave room for cls and sep");
    let mut ids = Vec::with_capacity(texts.len() * max_length);
    let mut mask = Vec::with_capacity(texts.len() * max_length);
    for text in texts {
        let body = vocab.encode(text.as_ref());
        let kept = body.len().min(max_length - 2);
        ids.push(CLS);
        ids.extend_from_slice(&body[..kept]);
        ids.push(SEP);
        let real = kept + 2;
        ids.extend(std::iter::repeat_n(PAD, max_length - real));
        mask.extend((0..max_length).map(|j| j < real));
    }
    TokenizedBatch {
        batch_size: texts.len(),
        seq_len: max_length,
        token_ids: ids,
        attention_mask: mask,
        labels: Vec::new(),
    }
}

pub fn encode_batch(examples: &[LabeledExample], vocab: &Vocab, max_length: usize) -> TokenizedBatch {
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let mut batch = encode_texts(&texts, vocab, max_length);
    batch.labels = examples.iter().map(|e| e.label).collect();
    batch
}
