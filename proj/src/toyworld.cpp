#include "umo/toyworld.hpp"

#include <cmath>
#include <stdexcept>

namespace umo {

const char* backend_kind_name(BackendKind k) {
    return k == BackendKind::LinearBasis ? "linear-basis" : "mixed-basis";
}

BackendKind backend_kind_from(const std::string& s) {
    if (s == "linear-basis") return BackendKind::LinearBasis;
    if (s == "mixed-basis") return BackendKind::MixedBasis;
    throw std::invalid_argument("unknown backend kind: " + s);
}

const char* task_name(Task t) {
    switch (t) {
        case Task::Binary: return "binary";
        case Task::Keypoint: return "keypoint";
        case Task::Segmentation: return "segmentation";
    }
    return "?";
}

Task task_from(const std::string& s) {
    if (s == "binary") return Task::Binary;
    if (s == "keypoint") return Task::Keypoint;
    if (s == "segmentation") return Task::Segmentation;
    throw std::invalid_argument("unknown task: " + s);
}

namespace {

// Unit spectral norm via power iteration on M^T M in double.
void normalize_spectral(Tensor& m, int k) {
    std::vector<double> v(static_cast<size_t>(k), 1.0 / std::sqrt(static_cast<double>(k)));
    std::vector<double> w(static_cast<size_t>(k), 0.0);
    for (int it = 0; it < 80; ++it) {
        for (int i = 0; i < k; ++i) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) acc += m.data[static_cast<size_t>(i) * k + j] * v[static_cast<size_t>(j)];
            w[static_cast<size_t>(i)] = acc;
        }
        double norm = 0.0;
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += m.data[static_cast<size_t>(i) * k + j] * w[static_cast<size_t>(i)];
            v[static_cast<size_t>(j)] = acc;
            norm += acc * acc;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) return;
        for (auto& x : v) x /= norm;
    }
    double sigma2 = 0.0;
    for (int i = 0; i < k; ++i) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += m.data[static_cast<size_t>(i) * k + j] * v[static_cast<size_t>(j)];
        sigma2 += acc * acc;
    }
    const double sigma = std::sqrt(sigma2);
    if (sigma > 0.0)
        for (auto& x : m.data) x = static_cast<float>(x / sigma);
}

}  // namespace

Backend::Backend(const BackendSpec& spec) : spec_(spec) {
    if (spec.attr_count < 2) throw std::invalid_argument("backend: attr_count must be >= 2");
    if (spec.height < 8 || spec.width < 8) throw std::invalid_argument("backend: image size must be >= 8x8");
    if (spec.attr_count > spec.height * spec.width)
        throw std::invalid_argument("backend: attr_count " + std::to_string(spec.attr_count) +
                                    " exceeds pixel count " + std::to_string(spec.height * spec.width) +
                                    "; bases would be degenerate");
    if (spec.mix_strength < 0.0f || spec.mix_strength > 1.0f)
        throw std::invalid_argument("backend: mix_strength must be in [0,1]");

    const int k = spec.attr_count, h = spec.height, w = spec.width, hw = h * w;
    Rng rng = Rng(spec.seed).derive("backend-basis");

    // Gaussian blob per attribute on a fixed grid (cell chosen by index alone,
    // so the same attribute occupies the same region across seeds), with
    // seeded jitter in position, width and amplitude.
    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k))));
    basis_ = Tensor::zeros({k, hw});
    for (int a = 0; a < k; ++a) {
        const double cx = ((a % grid) + 0.5) / grid * w + rng.uniform(-0.03, 0.03) * w;
        const double cy = ((a / grid) + 0.5) / grid * h + rng.uniform(-0.03, 0.03) * h;
        const double sigma = (0.09 + 0.05 * rng.uniform()) * std::min(h, w);
        const double amp = 2.0 + rng.uniform();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                basis_.data[static_cast<size_t>(a) * hw + y * w + x] =
                    static_cast<float>(amp * std::exp(-d2 / (2.0 * sigma * sigma)));
            }
    }

    // Bias: gentle gradient plus a low stripe, keeps the background off-flat.
    Rng brng = Rng(spec.seed).derive("backend-bias");
    const double g0 = brng.uniform(-0.6, 0.6), g1 = brng.uniform(-0.6, 0.6);
    const double freq = 2.0 + static_cast<double>(brng.below(2));
    const double phase = brng.uniform(0.0, 6.283185307179586);
    bias_ = Tensor::zeros({hw});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            bias_.data[static_cast<size_t>(y) * w + x] =
                static_cast<float>(g0 * (static_cast<double>(x) / w - 0.5) + g1 * (static_cast<double>(y) / h - 0.5) +
                                   0.2 * std::sin(6.283185307179586 * freq * x / w + phase) - 0.4);

    mixing_ = Tensor::zeros({k, k});
    if (spec.kind == BackendKind::MixedBasis) {
        Rng mrng = Rng(spec.seed).derive("backend-mixing");
        for (auto& v : mixing_.data) v = static_cast<float>(mrng.normal());
        normalize_spectral(mixing_, k);
    }
}

Backend make_backend(const BackendSpec& spec) { return Backend(spec); }

Tensor Backend::basis_image(int k) const {
    const int hw = pixels();
    Tensor img = Tensor::zeros({spec_.height, spec_.width});
    for (int i = 0; i < hw; ++i) img.data[i] = basis_.data[static_cast<size_t>(k) * hw + i];
    return img;
}

ValueId Backend::generate_on_tape(Tape& tape, ValueId style) const {
    const Tensor& s = tape.val(style);
    if (s.numel() != spec_.attr_count)
        throw std::invalid_argument("generate: style has " + std::to_string(s.numel()) + " coords, backend expects " +
                                    std::to_string(spec_.attr_count));
    const int k = spec_.attr_count;
    ValueId coords = tape.reshape(style, {k, 1});
    if (spec_.kind == BackendKind::MixedBasis && spec_.mix_strength > 0.0f) {
        ValueId mixed = tape.tanh_(tape.matmul(tape.leaf(mixing_), coords));
        coords = tape.add(coords, tape.scale(mixed, spec_.mix_strength));
    }
    ValueId row = tape.reshape(coords, {1, k});
    ValueId logits = tape.add(tape.matmul(row, tape.leaf(basis_)), tape.reshape(tape.leaf(bias_), {1, pixels()}));
    return tape.reshape(tape.sigmoid(logits), {spec_.height, spec_.width});
}

Tensor Backend::generate(const std::vector<float>& style) const {
    Tape tape;
    ValueId s = tape.leaf(Tensor::row(style));
    return tape.val(generate_on_tape(tape, s));
}

bool side_of(float coord) { return coord > 0.5f; }

namespace {

// Keypoint map parameters derive from a fixed constant so the map is a fixed
// smooth function of the attribute vector for a given (K, P).
void keypoint_map_params(int attr_count, int n_points, Tensor* m, Tensor* c) {
    Rng rng(0xA11CE0ULL + static_cast<uint64_t>(attr_count) * 131 + static_cast<uint64_t>(n_points));
    *m = Tensor::zeros({2 * n_points, attr_count});
    *c = Tensor::zeros({2 * n_points});
    for (auto& v : m->data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (auto& v : c->data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
}

}  // namespace

GroundTruth label(const Backend& backend, const LabelRule& rule, const std::vector<float>& style) {
    GroundTruth gt;
    switch (rule.task) {
        case Task::Binary: {
            gt.cls = side_of(style[static_cast<size_t>(rule.main_attr)]) ? 1 : 0;
            break;
        }
        case Task::Keypoint: {
            Tensor m, c;
            keypoint_map_params(backend.attrs(), rule.n_keypoints, &m, &c);
            gt.keypoints.resize(static_cast<size_t>(2 * rule.n_keypoints));
            for (int i = 0; i < 2 * rule.n_keypoints; ++i) {
                double acc = c.data[static_cast<size_t>(i)];
                for (int a = 0; a < backend.attrs(); ++a)
                    acc += m.data[static_cast<size_t>(i) * backend.attrs() + a] *
                           (style[static_cast<size_t>(a)] - 0.5);
                gt.keypoints[static_cast<size_t>(i)] = static_cast<float>(1.0 / (1.0 + std::exp(-acc)));
            }
            break;
        }
        case Task::Segmentation: {
            const int hw = backend.pixels(), k = backend.attrs();
            gt.seg.resize(static_cast<size_t>(hw));
            const Tensor& bases = backend.basis_matrix();
            for (int p = 0; p < hw; ++p) {
                int best = 0;
                float best_r = style[0] * bases.data[static_cast<size_t>(p)];
                for (int a = 1; a < k; ++a) {
                    const float r = style[static_cast<size_t>(a)] * bases.data[static_cast<size_t>(a) * hw + p];
                    if (r > best_r) {
                        best_r = r;
                        best = a;
                    }
                }
                gt.seg[static_cast<size_t>(p)] = best;
            }
            break;
        }
    }
    return gt;
}

namespace {

float uniform_off_boundary(Rng& rng) {
    for (;;) {
        const double u = rng.uniform();
        if (std::fabs(u - 0.5) >= 1e-3) return static_cast<float>(u);
    }
}

float uniform_side(Rng& rng, bool high) {
    // Uniform on one side of 0.5, clear of the 1e-3 boundary band.
    const double u = rng.uniform();
    return static_cast<float>(high ? 0.5 + 1e-3 + u * (0.5 - 1e-3) : u * (0.5 - 1e-3));
}

}  // namespace

std::vector<float> sample_latent(int attr_count, Rng& rng) {
    std::vector<float> s(static_cast<size_t>(attr_count));
    for (auto& v : s) v = uniform_off_boundary(rng);
    return s;
}

Dataset sample_biased_dataset(const Backend& backend, const LabelRule& rule, const BiasedDatasetSpec& spec,
                              Rng& rng) {
    if (spec.main_attr == spec.spurious_attr)
        throw std::invalid_argument("biased dataset: main_attr == spurious_attr");
    if (spec.epsilon < 0.0f || spec.epsilon > 1.0f) throw std::invalid_argument("biased dataset: epsilon in [0,1]");
    if (spec.n_per_class <= 0) throw std::invalid_argument("biased dataset: n_per_class must be positive");
    Dataset ds;
    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < spec.n_per_class; ++i) {
            std::vector<float> s = sample_latent(backend.attrs(), rng);
            s[static_cast<size_t>(spec.main_attr)] = uniform_side(rng, cls == 1);
            if (rng.uniform() >= spec.epsilon)
                s[static_cast<size_t>(spec.spurious_attr)] = uniform_side(rng, cls == 1);
            ds.labels.push_back(label(backend, rule, s));
            ds.latents.push_back(std::move(s));
        }
    }
    return ds;
}

Dataset sample_balanced_dataset(const Backend& backend, const LabelRule& rule, int n, Rng& rng) {
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        std::vector<float> s = sample_latent(backend.attrs(), rng);
        s[static_cast<size_t>(rule.main_attr)] = uniform_side(rng, (i % 2) == 1);
        ds.labels.push_back(label(backend, rule, s));
        ds.latents.push_back(std::move(s));
    }
    return ds;
}

Dataset sample_uniform_dataset(const Backend& backend, const LabelRule& rule, int n, Rng& rng) {
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        std::vector<float> s = sample_latent(backend.attrs(), rng);
        ds.labels.push_back(label(backend, rule, s));
        ds.latents.push_back(std::move(s));
    }
    return ds;
}

Dataset sample_incongruent_dataset(const Backend& backend, const LabelRule& rule, const BiasedDatasetSpec& spec,
                                   int n, Rng& rng) {
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        const bool high = (i % 2) == 1;
        std::vector<float> s = sample_latent(backend.attrs(), rng);
        s[static_cast<size_t>(spec.main_attr)] = uniform_side(rng, high);
        s[static_cast<size_t>(spec.spurious_attr)] = uniform_side(rng, !high);
        ds.labels.push_back(label(backend, rule, s));
        ds.latents.push_back(std::move(s));
    }
    return ds;
}

}  // namespace umo
