#include "selfrepair/corpus.hpp"

#include <cstring>
#include <fstream>

#include "detail.hpp"
#include "selfrepair/errors.hpp"

namespace selfrepair {

namespace {

constexpr char kMagic[4] = {'S', 'R', 'C', '1'};

} // namespace

std::int64_t Corpus::total_tokens() const {
    std::int64_t n = 0;
    for (const TokenSequence& s : sequences) n += s.length();
    return n;
}

std::int64_t Corpus::scoring_positions() const {
    std::int64_t n = 0;
    for (const TokenSequence& s : sequences) n += std::max(0, s.length() - 1);
    return n;
}

Corpus load_corpus(const std::filesystem::path& path, int vocab_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open file");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto fail_at = [&](std::size_t offset, const std::string& what) -> void {
        throw DataError(path.string() + ": " + what + " at byte offset " + std::to_string(offset));
    };

    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail_at(0, "bad magic (expected \"SRC1\")");

    std::size_t offset = 4;
    auto read_u32 = [&](const char* what) -> std::uint32_t {
        if (offset + 4 > bytes.size()) fail_at(offset, std::string("truncated ") + what);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + offset, 4);
        offset += 4;
        return v;
    };

    Corpus corpus;
    corpus.file_hash = detail::fnv1a(bytes.data(), bytes.size());
    const std::uint32_t count = read_u32("sequence count");
    corpus.sequences.reserve(count);
    for (std::uint32_t s = 0; s < count; ++s) {
        const std::uint32_t len = read_u32("sequence length");
        TokenSequence seq;
        seq.ids.reserve(len);
        for (std::uint32_t i = 0; i < len; ++i) {
            const std::size_t token_offset = offset;
            const std::uint32_t id = read_u32("token id");
            if (vocab_size > 0 && id >= static_cast<std::uint32_t>(vocab_size))
                throw DataError(path.string() + ": token id " + std::to_string(id) +
                                " in sequence " + std::to_string(s) + " position " +
                                std::to_string(i) + " exceeds the vocabulary (byte offset " +
                                std::to_string(token_offset) + ")");
            seq.ids.push_back(static_cast<std::int32_t>(id));
        }
        corpus.sequences.push_back(std::move(seq));
    }
    if (offset != bytes.size()) fail_at(offset, "trailing bytes after the last sequence");
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(kMagic, 4);
    auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    write_u32(static_cast<std::uint32_t>(corpus.sequences.size()));
    for (const TokenSequence& seq : corpus.sequences) {
        write_u32(static_cast<std::uint32_t>(seq.ids.size()));
        for (std::int32_t id : seq.ids) write_u32(static_cast<std::uint32_t>(id));
    }
    out.flush();
    if (!out) throw DataError(path.string() + ": write failed");
}

Corpus make_random_corpus(int n_sequences, int seq_len, int vocab, std::uint64_t seed) {
    if (n_sequences <= 0 || seq_len <= 0 || vocab <= 0)
        throw ConfigError("random corpus needs positive sequence count, length, and vocabulary");
    detail::SplitMix64 rng(seed ^ 0xc09f15ULL);
    Corpus corpus;
    corpus.sequences.resize(static_cast<std::size_t>(n_sequences));
    for (TokenSequence& seq : corpus.sequences) {
        seq.ids.resize(static_cast<std::size_t>(seq_len));
        for (auto& id : seq.ids)
            id = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
    }
    return corpus;
}

} // namespace selfrepair
