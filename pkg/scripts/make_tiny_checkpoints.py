"""Build the tiny randomly initialized checkpoints used by the test suite.

    python scripts/make_tiny_checkpoints.py [--out tests/fixtures]

Writes ``tiny-bert`` (encoder with a character-level WordPiece vocabulary)
and ``tiny-gpt2`` (decoder with a byte-level vocabulary and no merges).
"""

import argparse
import string
from pathlib import Path

import torch
from transformers import BertConfig, BertModel, BertTokenizer, GPT2Config, GPT2Model, GPT2Tokenizer
from transformers.convert_slow_tokenizer import bytes_to_unicode

HIDDEN = 32
LAYERS = 2
HEADS = 2
POSITIONS = 160


def bert_vocab() -> dict[str, int]:
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    word = list(string.digits + string.ascii_lowercase)
    punct = list("+-*/=().,;:!?'\"|#<>[]{}_^%&$@~`\\")
    tokens = specials + word + punct + ["##" + c for c in word]
    return {t: i for i, t in enumerate(tokens)}


def make_bert(out: Path) -> None:
    tok = BertTokenizer(vocab=bert_vocab())
    cfg = BertConfig(
        vocab_size=len(tok),
        hidden_size=HIDDEN,
        num_hidden_layers=LAYERS,
        num_attention_heads=HEADS,
        intermediate_size=2 * HIDDEN,
        max_position_embeddings=POSITIONS,
    )
    BertModel(cfg, add_pooling_layer=False).save_pretrained(out)
    tok.save_pretrained(out)


def make_gpt2(out: Path) -> None:
    b2u = bytes_to_unicode()
    vocab = {b2u[b]: i for i, b in enumerate(range(256))}
    vocab["<|endoftext|>"] = 256
    tok = GPT2Tokenizer(vocab=vocab, merges=[])
    cfg = GPT2Config(
        vocab_size=257,
        n_embd=HIDDEN,
        n_layer=LAYERS,
        n_head=HEADS,
        n_positions=POSITIONS,
        bos_token_id=256,
        eos_token_id=256,
    )
    GPT2Model(cfg).save_pretrained(out)
    tok.save_pretrained(out)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "fixtures")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    torch.manual_seed(args.seed)
    make_bert(args.out / "tiny-bert")
    make_gpt2(args.out / "tiny-gpt2")
    print(f"wrote {args.out / 'tiny-bert'} and {args.out / 'tiny-gpt2'}")


if __name__ == "__main__":
    main()
