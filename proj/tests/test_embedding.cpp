#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "umo/embedding.hpp"

using namespace umo;
using umo::testing::fd_gradient;
using umo::testing::rel_err;

namespace {

std::map<std::string, int> axis_vocab(int k) {
    std::map<std::string, int> v;
    for (int i = 0; i < k; ++i) v["attr" + std::to_string(i)] = i;
    return v;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

double norm(const std::vector<float>& a) { return std::sqrt(dot(a, a)); }

BackendSpec spec8(uint64_t seed, BackendKind kind = BackendKind::LinearBasis) {
    BackendSpec s;
    s.seed = seed;
    s.attr_count = 8;
    s.kind = kind;
    return s;
}

}  // namespace

TEST_CASE("encode_image: unit norm, oracle fitness, input gradient, dim checks") {
    Backend be(spec8(19));
    auto joint = make_oracle_encoders(be, axis_vocab(8), 64, 5);
    Rng rng(3);

    SUBCASE("norm is 1 within 1e-6") {
        for (int rep = 0; rep < 20; ++rep) {
            auto h = joint.image.encode(be.generate(sample_latent(8, rng)));
            CHECK(std::fabs(norm(h) - 1.0) <= 1e-6);
        }
    }

    SUBCASE("pure axis edit moves the embedding along Q e_k") {
        for (int k = 0; k < 8; ++k) {
            auto s = sample_latent(8, rng);
            auto s2 = s;
            s2[static_cast<size_t>(k)] += 0.1f;
            auto h1 = joint.image.encode(be.generate(s));
            auto h2 = joint.image.encode(be.generate(s2));
            std::vector<float> dh(h1.size());
            for (size_t i = 0; i < dh.size(); ++i) dh[i] = h2[i] - h1[i];
            // Q column k
            const Tensor& q = joint.image.embed_map();
            std::vector<float> qk(static_cast<size_t>(q.shape[0]));
            for (int d = 0; d < q.shape[0]; ++d) qk[static_cast<size_t>(d)] = q.data[static_cast<size_t>(d) * 8 + k];
            const double cosine = dot(dh, qk) / (norm(dh) * norm(qk));
            CHECK(cosine >= 0.9);
        }
    }

    SUBCASE("gradient w.r.t. image pixels matches finite differences") {
        Tensor img = be.generate(sample_latent(8, rng));
        Tape tape;
        ValueId x = tape.param(img, 0);
        ValueId h = joint.image.encode_on_tape(tape, x);
        Tensor w = Tensor::zeros({64});
        Rng wr(7);
        for (auto& v : w.data) v = static_cast<float>(wr.uniform(-1.0, 1.0));
        ValueId out = tape.sum(tape.mul(h, tape.leaf(w)));
        auto grads = tape.backward(out);
        auto fd = fd_gradient(tape, out, 0, img, 1e-4);
        double worst = 0.0;
        for (size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, rel_err(grads.at(0).data[i], fd[i], 1e-4));
        CHECK(worst <= 1e-3);
    }

    SUBCASE("mismatched image size rejected with both dims named") {
        CHECK_THROWS_WITH_AS(joint.image.encode(Tensor::zeros({8, 8})), doctest::Contains("64"),
                             std::invalid_argument);
    }
}

TEST_CASE("oracle-mode fitness: matched attribute dominates all cross terms") {
    for (BackendKind kind : {BackendKind::LinearBasis, BackendKind::MixedBasis}) {
        Backend be(spec8(23, kind));
        auto joint = make_oracle_encoders(be, axis_vocab(8), 64, 9);
        const std::string cls = "pattern";

        std::vector<std::vector<float>> dt(8);
        for (int k = 0; k < 8; ++k) {
            auto ti = joint.text.encode_attr(cls, "attr" + std::to_string(k));
            auto tb = joint.text.encode_base(cls);
            std::vector<float> d(ti.size());
            for (size_t i = 0; i < d.size(); ++i) d[i] = ti[i] - tb[i];
            const double n = norm(d);
            for (auto& v : d) v = static_cast<float>(v / n);
            dt[static_cast<size_t>(k)] = std::move(d);
        }

        Rng rng(31);
        for (int rep = 0; rep < 100; ++rep) {
            auto s = sample_latent(8, rng);
            const int k = static_cast<int>(rng.below(8));
            auto s2 = s;
            s2[static_cast<size_t>(k)] += 0.1f;
            auto h1 = joint.image.encode(be.generate(s));
            auto h2 = joint.image.encode(be.generate(s2));
            std::vector<float> dh(h1.size());
            for (size_t i = 0; i < dh.size(); ++i) dh[i] = h2[i] - h1[i];
            const double nh = norm(dh);
            for (auto& v : dh) v = static_cast<float>(v / nh);
            const double matched = dot(dh, dt[static_cast<size_t>(k)]);
            for (int j = 0; j < 8; ++j) {
                if (j == k) continue;
                CHECK(matched > dot(dh, dt[static_cast<size_t>(j)]));
            }
        }
    }
}

TEST_CASE("encode_text: determinism, axis separation, degenerate base difference") {
    Backend be(spec8(19));
    auto joint = make_oracle_encoders(be, axis_vocab(8), 64, 5);
    const std::string cls = "pattern";

    auto a = joint.text.encode_attr(cls, "attr3");
    auto b = joint.text.encode_attr(cls, "attr3");
    CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);

    auto base1 = joint.text.encode_base(cls);
    auto base2 = joint.text.encode_base(cls);
    for (size_t i = 0; i < base1.size(); ++i) CHECK(base1[i] - base2[i] == 0.0f);

    // Unknown phrases get stable unit codes.
    auto u1 = joint.text.encode_bare("totally new phrase");
    auto u2 = joint.text.encode_bare("totally new phrase");
    CHECK(std::memcmp(u1.data(), u2.data(), u1.size() * 4) == 0);
    CHECK(std::fabs(norm(u1) - 1.0) <= 1e-6);
}

TEST_CASE("zero-shot classifier: simplex output, duplicate labels, tau zero, rescale invariance") {
    Backend be(spec8(19));
    auto joint = make_oracle_encoders(be, axis_vocab(8), 64, 5);
    Rng rng(13);
    Tensor img = be.generate(sample_latent(8, rng));
    std::vector<std::string> labels{"plain pattern", "attr0"};

    auto p = zero_shot_classify(joint.image, joint.text, img, labels, 100.0f);
    REQUIRE(p.size() == 2);
    double total = 0.0;
    for (float v : p) {
        CHECK(v >= 0.0f);
        total += v;
    }
    CHECK(std::fabs(total - 1.0) <= 1e-6);

    auto dup = zero_shot_classify(joint.image, joint.text, img, {"attr0", "attr0"}, 100.0f);
    CHECK(dup[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(dup[1] == doctest::Approx(0.5).epsilon(1e-6));

    auto flat = zero_shot_classify(joint.image, joint.text, img, labels, 0.0f);
    CHECK(flat[0] == doctest::Approx(0.5).epsilon(1e-6));

    CHECK_THROWS_AS(zero_shot_classify(joint.image, joint.text, img, {"only-one"}, 1.0f), std::invalid_argument);

    // Common positive rescaling of pre-normalization text embeddings is
    // absorbed by normalization.
    Tensor scaled_q = joint.text.embed_map();
    for (auto& v : scaled_q.data) v *= 3.7f;
    Tensor scaled_anchor = joint.text.anchor();
    for (auto& v : scaled_anchor.data) v *= 3.7f;
    TextEncoder scaled(axis_vocab(8), 8, scaled_q, scaled_anchor, 5);
    auto p2 = zero_shot_classify(joint.image, scaled, img, labels, 100.0f);
    for (size_t i = 0; i < p.size(); ++i) CHECK(std::fabs(p[i] - p2[i]) <= 1e-6);
}

TEST_CASE("encoder manifests round trip bitwise and reject corrupt files") {
    namespace fs = std::filesystem;
    Backend be(spec8(19));
    auto joint = make_oracle_encoders(be, axis_vocab(8), 64, 5);
    const fs::path dir = fs::temp_directory_path() / "umo_enc_test";
    fs::remove_all(dir);

    save_image_encoder(joint.image, (dir / "img").string());
    auto loaded = load_encoder((dir / "img").string());
    REQUIRE(std::holds_alternative<ImageEncoder>(loaded));
    const auto& ie = std::get<ImageEncoder>(loaded);
    Rng rng(3);
    Tensor img = be.generate(sample_latent(8, rng));
    auto h1 = joint.image.encode(img);
    auto h2 = ie.encode(img);
    CHECK(std::memcmp(h1.data(), h2.data(), h1.size() * 4) == 0);

    save_text_encoder(joint.text, (dir / "txt").string());
    auto tload = load_encoder((dir / "txt").string());
    REQUIRE(std::holds_alternative<TextEncoder>(tload));
    auto t1 = joint.text.encode_attr("pattern", "attr2");
    auto t2 = std::get<TextEncoder>(tload).encode_attr("pattern", "attr2");
    CHECK(std::memcmp(t1.data(), t2.data(), t1.size() * 4) == 0);

    // Wrong magic in a tensor file.
    {
        std::ofstream bad(dir / "img" / "embed.umot", std::ios::binary);
        bad.write("JUNKJUNK", 8);
    }
    CHECK_THROWS_AS(load_encoder((dir / "img").string()), std::runtime_error);

    // Truncated manifest.
    fs::create_directories(dir / "trunc");
    {
        std::ofstream bad(dir / "trunc" / "encoder.json");
        bad << "{\"kind\": \"image\",";
    }
    CHECK_THROWS(load_encoder((dir / "trunc").string()));

    CHECK_THROWS_AS(load_encoder((dir / "missing").string()), std::runtime_error);
}
