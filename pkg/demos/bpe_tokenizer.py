"""Byte-level BPE from nothing: train, inspect merges, encode, measure.

Run: python demos/bpe_tokenizer.py
"""

from qwenkit import base_vocab, bpe_train, compression_rate, decode, encode

CORPUS = [
    b"the cat sat on the mat",
    b"the dog sat on the log",
    b"the cats and the dogs",
]

# Training greedily merges the most frequent adjacent pair inside word
# boundaries. Ties go to the lexicographically smaller merged byte string, so
# two runs over the same corpus always produce the same vocabulary.
vocab = bpe_train(CORPUS, target_vocab=280)
print(f"vocabulary: {vocab.vocab_size} ids "
      f"({len(vocab.merges)} merges + 256 bytes + {len(vocab.control_names)} control)")
print("first merges:")
for k, (left, right) in enumerate(vocab.merges[:8]):
    print(f"  {256 + k}: {vocab.token_bytes[left]!r} + {vocab.token_bytes[right]!r}"
          f" -> {vocab.token_bytes[256 + k]!r}")

# Encoding applies the merges in training order inside each word.
text = b"the cat sat on the log"
ids = encode(vocab, text)
print(f"\nencode {text!r}")
print("ids   :", ids)
print("tokens:", [vocab.token_bytes[i] for i in ids])
print("exact roundtrip:", decode(vocab, ids) == text)

# Because the base alphabet is the 256 bytes, anything roundtrips, including
# byte strings that are not valid UTF-8.
junk = b"\xff\xfe\x00 broken \xc3( utf8"
print("junk roundtrip :", decode(vocab, encode(vocab, junk)) == junk)

# Compression rate = corpus bytes per token. The byte-only vocabulary scores
# exactly 1.0; every useful merge pushes it up.
print(f"\ncompression rate, byte vocab : {compression_rate(base_vocab(), CORPUS):.3f}")
print(f"compression rate, trained    : {compression_rate(vocab, CORPUS):.3f}")

multilingual = "你好世界 Привет мир مرحبا 안녕 สวัสดี こんにちは नमस्ते".encode("utf-8")
print(f"multilingual bytes roundtrip : "
      f"{decode(vocab, encode(vocab, multilingual)) == multilingual}")
