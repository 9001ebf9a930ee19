#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "test_helpers.hpp"

using namespace selfrepair;
using testutil::TempDir;
using testutil::tiny_config;

TEST_CASE("model config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.n_layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.d_head = 15;
    c.positional_kind = PositionalKind::Rotary;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("component ids validate, print, parse, and order") {
    const ModelConfig c = tiny_config();
    CHECK_NOTHROW(ComponentId::head(2, 3).validate(c));
    CHECK_THROWS_AS(ComponentId::head(3, 0).validate(c), ContractError);
    CHECK_THROWS_AS(ComponentId::head(0, 4).validate(c), ContractError);
    CHECK_THROWS_AS(ComponentId::neuron(0, 128).validate(c), ContractError);

    CHECK(ComponentId::head(2, 3).str() == "L2H3");
    CHECK(ComponentId::embed().str() == "embed");
    CHECK(ComponentId::mlp_layer(1).str() == "L1.mlp");
    CHECK(ComponentId::parse("L2H3") == ComponentId::head(2, 3));
    CHECK(ComponentId::parse("embed") == ComponentId::embed());
    CHECK(ComponentId::parse("L1.mlp_bias") == ComponentId::mlp_bias(1));
    CHECK(ComponentId::parse("L0N17") == ComponentId::neuron(0, 17));
    CHECK_THROWS_AS(ComponentId::parse("nonsense"), ConfigError);

    CHECK(ComponentId::embed() < ComponentId::head(0, 0));
    CHECK(ComponentId::head(0, 3) < ComponentId::attn_bias(0));
    CHECK(ComponentId::attn_bias(0) < ComponentId::mlp_layer(0));
    CHECK(ComponentId::mlp_layer(0) < ComponentId::head(1, 0));
}

TEST_CASE("toy model init is seed-deterministic") {
    const ModelConfig c = tiny_config();
    const Model a = init_toy_model(c, 7);
    const Model b = init_toy_model(c, 7);
    const Model d = init_toy_model(c, 8);
    CHECK(a.weight_hash() == b.weight_hash());
    CHECK(a.weight_hash() != d.weight_hash());
    CHECK(a.weights().embed_tok == b.weights().embed_tok);
    CHECK(a.weights().layers[0].wq != d.weights().layers[0].wq);
}

TEST_CASE("toy model forward stays finite on random prompts") {
    const Model model = init_toy_model(tiny_config(), 21);
    for (int s = 0; s < 4; ++s) {
        const ForwardTrace trace =
            forward(model, testutil::random_tokens(17 + s, model.config().vocab_size, 90 + s));
        for (float v : trace.logits) CHECK(std::isfinite(v));
        for (float v : trace.residual) CHECK(std::isfinite(v));
        for (float s_k : trace.final_scale) CHECK(s_k > 0.0f);
    }
}

TEST_CASE("model save/load round trip reproduces the forward pass bit-exactly") {
    TempDir dir("model_roundtrip");
    const Model model = init_toy_model(tiny_config(), 17);
    save_model(model, dir.file("toy.weights"));
    const Model again = load_model(dir.file("toy.weights"));
    CHECK(again.weight_hash() == model.weight_hash());
    CHECK(again.config() == model.config());

    const TokenSequence prompt = testutil::random_tokens(19, model.config().vocab_size, 5);
    const ForwardTrace a = forward(model, prompt);
    const ForwardTrace b = forward(again, prompt);
    REQUIRE(a.logits.size() == b.logits.size());
    CHECK(std::memcmp(a.logits.data(), b.logits.data(), a.logits.size() * sizeof(float)) == 0);
}

TEST_CASE("loading rejects missing, misshaped, unknown, and non-finite tensors") {
    TempDir dir("model_errors");
    const Model model = init_toy_model(tiny_config(), 3);
    const auto path = dir.file("toy.weights");
    save_model(model, path);

    SUBCASE("missing tensor names the tensor") {
        TensorStore store = read_tensor_store(path);
        store.tensors.erase("final_norm.gain");
        write_tensor_store(store, path);
        CHECK_THROWS_WITH_AS(load_model(path),
                             doctest::Contains("missing tensor: final_norm.gain"), DataError);
    }
    SUBCASE("shape mismatch names the tensor") {
        TensorStore store = read_tensor_store(path);
        store.tensors["layer.1.attn.wq"].shape = {4, 4};
        store.tensors["layer.1.attn.wq"].data.assign(16, 0.0f);
        write_tensor_store(store, path);
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("layer.1.attn.wq"), DataError);
    }
    SUBCASE("unknown tensor is rejected") {
        TensorStore store = read_tensor_store(path);
        NamedTensor extra;
        extra.shape = {2};
        extra.data = {1.0f, 2.0f};
        store.tensors["mystery.tensor"] = extra;
        write_tensor_store(store, path);
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("unexpected tensor"), DataError);
    }
    SUBCASE("non-finite values are rejected") {
        TensorStore store = read_tensor_store(path);
        store.tensors["embed.tok"].data[5] = std::numeric_limits<float>::quiet_NaN();
        write_tensor_store(store, path);
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("embed.tok"), DataError);
    }
    SUBCASE("expected-config mismatch is rejected") {
        ModelConfig other = tiny_config();
        other.n_heads = 2;
        other.d_head = 32;
        CHECK_THROWS_AS(load_model(path, other), DataError);
    }
}

TEST_CASE("gpt2-small shaped architecture carries 3072 neurons per layer") {
    ModelConfig c;
    c.n_layers = 12;
    c.n_heads = 12;
    c.d_model = 96; // desk-scale stand-in; the MLP width is what matters here
    c.d_head = 8;
    c.d_mlp = 3072;
    c.vocab_size = 128;
    c.max_seq = 16;
    c.parallel_attention = false;
    c.positional_kind = PositionalKind::AbsoluteLearned;
    const Model model = init_toy_model(c, 5);
    CHECK(model.config().d_mlp == 3072);
    const ForwardTrace trace = forward(model, testutil::random_tokens(6, c.vocab_size, 1));
    CHECK(neuron_direct_effects(model, trace, 11, 2).size() == 3072);
    // 12x12 head rows + 12 attention biases + 12 MLP rows + embed.
    const DirectEffectTable table = direct_effect_all(model, trace, 2);
    CHECK(table.effects.size() == 1 + 12 * 12 + 12 + 12);
}

TEST_CASE("forward validates tokens") {
    const Model model = init_toy_model(tiny_config(), 9);
    TokenSequence too_long = testutil::random_tokens(33, model.config().vocab_size, 2);
    CHECK_THROWS_AS(forward(model, too_long), DataError);
    TokenSequence bad_id = testutil::tokens_of({1, 2, 64});
    CHECK_THROWS_AS(forward(model, bad_id), DataError);
    CHECK_THROWS_AS(forward(model, TokenSequence{}), DataError);
}

TEST_CASE("single-token prompt yields a one-position trace") {
    const Model model = init_toy_model(tiny_config(), 11);
    const ForwardTrace trace = forward(model, testutil::tokens_of({42}));
    CHECK(trace.seq_len == 1);
    CHECK(trace.scoring_positions() == 0);
    CHECK(residual_reconstruction_check(trace) < 1e-4);
    CHECK_THROWS_AS(trace.next_token(0), ContractError);
}

TEST_CASE("residual reconstructs as embed plus component outputs") {
    for (bool parallel : {true, false})
        for (NormKind norm : {NormKind::LayerNorm, NormKind::RmsNorm}) {
            const Model model = init_toy_model(tiny_config(parallel, norm), 31);
            const ForwardTrace trace =
                forward(model, testutil::random_tokens(24, model.config().vocab_size, 77));
            CHECK(residual_reconstruction_check(trace) < 1e-4);
        }
}

TEST_CASE("zero-weight model reconstructs exactly") {
    const ModelConfig c = tiny_config(false, NormKind::LayerNorm);
    ModelWeights w = init_toy_model(c, 1).weights();
    auto zero = [](std::vector<float>& v) { std::fill(v.begin(), v.end(), 0.0f); };
    zero(w.embed_tok);
    zero(w.embed_pos);
    for (LayerWeights& l : w.layers) {
        zero(l.norm1_gain);
        zero(l.norm1_bias);
        zero(l.wq);
        zero(l.wk);
        zero(l.wv);
        zero(l.wo);
        zero(l.bo);
        zero(l.norm2_gain);
        zero(l.norm2_bias);
        zero(l.win);
        zero(l.bin);
        zero(l.wout);
        zero(l.bout);
    }
    zero(w.final_norm_gain);
    zero(w.final_norm_bias);
    zero(w.unembed_w);
    const Model model(c, std::move(w));
    const ForwardTrace trace = forward(model, testutil::tokens_of({1, 2, 3}));
    CHECK(residual_reconstruction_check(trace) == 0.0);
    for (float v : trace.residual) CHECK(v == 0.0f);
    const DirectEffectTable table = direct_effect_all(model, trace, 0);
    for (const auto& [id, de] : table.effects) CHECK(de == 0.0);
}

TEST_CASE("forward pass is bit-deterministic") {
    const Model model = init_toy_model(tiny_config(), 13);
    const TokenSequence prompt = testutil::random_tokens(20, model.config().vocab_size, 3);
    const ForwardTrace a = forward(model, prompt);
    const ForwardTrace b = forward(model, prompt);
    CHECK(std::memcmp(a.logits.data(), b.logits.data(), a.logits.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(a.residual.data(), b.residual.data(), a.residual.size() * sizeof(float)) ==
          0);
}

TEST_CASE("causality: editing token j leaves earlier positions untouched") {
    const Model model = init_toy_model(tiny_config(), 15);
    const int vocab = model.config().vocab_size;
    for (int trial = 0; trial < 3; ++trial) {
        TokenSequence a = testutil::random_tokens(20, vocab, 40 + trial);
        TokenSequence b = a;
        const int j = 5 + 4 * trial;
        b.ids[static_cast<std::size_t>(j)] =
            static_cast<std::int32_t>((b.ids[static_cast<std::size_t>(j)] + 1) % vocab);
        const ForwardTrace ta = forward(model, a);
        const ForwardTrace tb = forward(model, b);
        const auto v = static_cast<std::size_t>(model.config().vocab_size);
        for (int k = 0; k < j; ++k)
            CHECK(std::memcmp(&ta.logits[static_cast<std::size_t>(k) * v],
                              &tb.logits[static_cast<std::size_t>(k) * v],
                              v * sizeof(float)) == 0);
        CHECK(std::memcmp(&ta.logits[static_cast<std::size_t>(j) * v],
                          &tb.logits[static_cast<std::size_t>(j) * v], v * sizeof(float)) != 0);
    }
}

TEST_CASE("head and neuron sub-decompositions match layer outputs") {
    const Model model = init_toy_model(tiny_config(), 19);
    const ModelConfig& c = model.config();
    const ForwardTrace trace = forward(model, testutil::random_tokens(16, c.vocab_size, 8));
    for (int pos : {0, 7, 15})
        for (int l = 0; l < c.n_layers; ++l) {
            // heads + attention bias vs the attention update of the residual
            std::vector<double> attn(static_cast<std::size_t>(c.d_model), 0.0);
            for (int h = 0; h < c.n_heads; ++h) {
                const auto out = trace.head_at(l, h, pos);
                for (int d = 0; d < c.d_model; ++d) attn[static_cast<std::size_t>(d)] +=
                    out[static_cast<std::size_t>(d)];
            }
            const auto bias = trace.attn_bias_at(l);
            const auto mlp = trace.mlp_at(l, pos);
            const auto in = trace.layer_input_at(l, pos);
            const auto next = l + 1 < c.n_layers ? trace.layer_input_at(l + 1, pos)
                                                 : trace.residual_at(pos);
            for (int d = 0; d < c.d_model; ++d) {
                const double expected = static_cast<double>(next[static_cast<std::size_t>(d)]) -
                                        in[static_cast<std::size_t>(d)] -
                                        mlp[static_cast<std::size_t>(d)];
                CHECK(std::abs(attn[static_cast<std::size_t>(d)] +
                               bias[static_cast<std::size_t>(d)] - expected) < 1e-4);
            }
            // neurons + output bias vs the stored MLP output
            const auto act = trace.neuron_act_at(l, pos);
            const auto& lw = model.weights().layers[static_cast<std::size_t>(l)];
            for (int d = 0; d < c.d_model; ++d) {
                double s = lw.bout[static_cast<std::size_t>(d)];
                for (int j = 0; j < c.d_mlp; ++j)
                    s += static_cast<double>(act[static_cast<std::size_t>(j)]) *
                         lw.wout[static_cast<std::size_t>(j) * c.d_model +
                                 static_cast<std::size_t>(d)];
                CHECK(std::abs(s - mlp[static_cast<std::size_t>(d)]) < 1e-4);
            }
        }
}

TEST_CASE("tensor store: deterministic bytes and metadata round trip") {
    TempDir dir("store");
    TensorStore store;
    NamedTensor t;
    t.shape = {2, 3};
    t.data = {1, 2, 3, 4, 5, 6};
    store.tensors["b.second"] = t;
    store.tensors["a.first"] = t;
    store.metadata["note"] = "hello";
    write_tensor_store(store, dir.file("x.st"));
    const TensorStore back = read_tensor_store(dir.file("x.st"));
    CHECK(back.tensors.size() == 2);
    CHECK(back.metadata.at("note") == "hello");
    CHECK(back.tensors.at("a.first").data == t.data);

    write_tensor_store(back, dir.file("y.st"));
    std::ifstream f1(dir.file("x.st"), std::ios::binary);
    std::ifstream f2(dir.file("y.st"), std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}
