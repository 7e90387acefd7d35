"""Demo: one shared BPE tokenizer for natural language and code.

Trains the subword vocabulary on the synthetic NL corpus only, then shows
that it still round-trips toy code exactly (the NL corpus covers the code
alphabet by construction) and how MLM masking corrupts a batch.

Run: python3 demos/02_tokenizer.py
"""

import numpy as np

from adapterlab.synth import synth_code_records, synth_nl_corpus
from adapterlab.tokenizer import apply_mlm_mask, encode_batch, train_bpe

nl = synth_nl_corpus(2000, seed=0)
vocab = train_bpe(nl, 1024)
print(f"trained on {len(nl)} NL paragraphs -> vocab size {vocab.size}, "
      f"{len(vocab.merges)} merges")

code = synth_code_records("alpha", 3, seed=1)
for rec in code:
    ids = vocab.encode(rec.code)
    ok = vocab.decode(ids) == rec.code
    print(f"\n{rec.id}: {len(ids)} tokens, exact round-trip: {ok}")
    print(rec.code)

ids, attn = encode_batch([r.code for r in code], vocab, max_len=64)
batch = apply_mlm_mask(ids, attn, vocab, mask_rate=0.15, seed=7)
n_sel = (batch.labels != batch.IGNORE).sum()
n_masked = (batch.input_ids == vocab.mask_id).sum()
print(f"\nMLM masking: {n_sel} positions selected, {n_masked} became <mask>, "
      f"{n_sel - n_masked} random/kept")
