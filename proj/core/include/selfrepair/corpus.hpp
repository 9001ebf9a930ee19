#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "selfrepair/model.hpp"

namespace selfrepair {

/// Pre-tokenized corpus. On disk: magic "SRC1", a little-endian u32 sequence
/// count, then per sequence a u32 length followed by that many u32 token ids.
struct Corpus {
    std::vector<TokenSequence> sequences;
    std::uint64_t file_hash = 0; // FNV-1a over the file bytes, 0 for in-memory corpora

    std::int64_t total_tokens() const;
    /// Positions with a known next token: total tokens minus one per sequence.
    std::int64_t scoring_positions() const;
};

/// Loads and validates a corpus file; token ids are checked against
/// vocab_size. Structural problems (bad magic, truncation) raise DataError
/// with the byte offset; an out-of-range id raises DataError naming the
/// sequence and position. Pass vocab_size <= 0 to skip the id check.
Corpus load_corpus(const std::filesystem::path& path, int vocab_size);

/// Writes the corpus in the format above; a write/read round trip reproduces
/// the sequences exactly.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Deterministic random corpus of uniform-length sequences over [0, vocab).
Corpus make_random_corpus(int n_sequences, int seq_len, int vocab, std::uint64_t seed);

} // namespace selfrepair
