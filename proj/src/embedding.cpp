#include "umo/embedding.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace umo {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

ValueId l2_normalize(Tape& tape, ValueId v) {
    ValueId sq = tape.sum(tape.mul(v, v));
    ValueId norm = tape.sqrt_(tape.add(sq, tape.leaf(Tensor::scalar(1e-12f))));
    return tape.div(v, norm);
}

std::vector<float> l2_normalize(const std::vector<float>& v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    const double norm = std::sqrt(acc + 1e-12);
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

namespace {

// Least-squares recovery map P = (B B^T)^-1 B, computed in double.
Tensor pseudo_inverse_rows(const Tensor& basis) {
    const int k = basis.shape[0], n = basis.shape[1];
    std::vector<double> gram(static_cast<size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int p = 0; p < n; ++p)
                acc += static_cast<double>(basis.data[static_cast<size_t>(i) * n + p]) *
                       basis.data[static_cast<size_t>(j) * n + p];
            gram[static_cast<size_t>(i) * k + j] = acc;
        }
    // Invert the Gram matrix by Gauss-Jordan with partial pivoting.
    std::vector<double> inv(static_cast<size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i) inv[static_cast<size_t>(i) * k + i] = 1.0;
    for (int col = 0; col < k; ++col) {
        int piv = col;
        for (int r = col + 1; r < k; ++r)
            if (std::fabs(gram[static_cast<size_t>(r) * k + col]) >
                std::fabs(gram[static_cast<size_t>(piv) * k + col]))
                piv = r;
        if (std::fabs(gram[static_cast<size_t>(piv) * k + col]) < 1e-12)
            throw std::runtime_error("oracle encoder: basis Gram matrix is singular");
        if (piv != col)
            for (int c = 0; c < k; ++c) {
                std::swap(gram[static_cast<size_t>(piv) * k + c], gram[static_cast<size_t>(col) * k + c]);
                std::swap(inv[static_cast<size_t>(piv) * k + c], inv[static_cast<size_t>(col) * k + c]);
            }
        const double d = gram[static_cast<size_t>(col) * k + col];
        for (int c = 0; c < k; ++c) {
            gram[static_cast<size_t>(col) * k + c] /= d;
            inv[static_cast<size_t>(col) * k + c] /= d;
        }
        for (int r = 0; r < k; ++r) {
            if (r == col) continue;
            const double f = gram[static_cast<size_t>(r) * k + col];
            if (f == 0.0) continue;
            for (int c = 0; c < k; ++c) {
                gram[static_cast<size_t>(r) * k + c] -= f * gram[static_cast<size_t>(col) * k + c];
                inv[static_cast<size_t>(r) * k + c] -= f * inv[static_cast<size_t>(col) * k + c];
            }
        }
    }
    Tensor p = Tensor::zeros({k, n});
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l)
                acc += inv[static_cast<size_t>(i) * k + l] * basis.data[static_cast<size_t>(l) * n + j];
            p.data[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    return p;
}

constexpr float kAnchorScale = 2.5f;

// Seeded orthonormal columns via Gram-Schmidt in double. Generates k content
// columns plus one extra direction used as the shared anchor.
Tensor orthonormal_embed(int dim, int k, uint64_t seed) {
    if (dim < k) throw std::invalid_argument("embedding: dim must be >= attribute count + 1");
    Rng rng = Rng(seed).derive("embed-q");
    std::vector<std::vector<double>> cols(static_cast<size_t>(k), std::vector<double>(static_cast<size_t>(dim)));
    for (auto& col : cols)
        for (auto& v : col) v = rng.normal();
    for (int c = 0; c < k; ++c) {
        for (int pre = 0; pre < c; ++pre) {
            double dot = 0.0;
            for (int d = 0; d < dim; ++d) dot += cols[static_cast<size_t>(c)][static_cast<size_t>(d)] *
                                                 cols[static_cast<size_t>(pre)][static_cast<size_t>(d)];
            for (int d = 0; d < dim; ++d)
                cols[static_cast<size_t>(c)][static_cast<size_t>(d)] -=
                    dot * cols[static_cast<size_t>(pre)][static_cast<size_t>(d)];
        }
        double norm = 0.0;
        for (double v : cols[static_cast<size_t>(c)]) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : cols[static_cast<size_t>(c)]) v /= norm;
    }
    Tensor q = Tensor::zeros({dim, k});
    for (int d = 0; d < dim; ++d)
        for (int c = 0; c < k; ++c)
            q.data[static_cast<size_t>(d) * k + c] = static_cast<float>(cols[static_cast<size_t>(c)][static_cast<size_t>(d)]);
    return q;
}

}  // namespace

ImageEncoder::ImageEncoder(Mode mode, Preprocess pre, Tensor recovery, Tensor offset, Tensor embed, Tensor anchor,
                           uint64_t seed)
    : mode_(mode), pre_(pre), recovery_(std::move(recovery)), offset_(std::move(offset)), embed_(std::move(embed)),
      anchor_(std::move(anchor)), seed_(seed) {
    if (recovery_.rank() != 2 || embed_.rank() != 2)
        throw std::invalid_argument("image encoder: recovery and embed maps must be matrices");
    if (offset_.numel() != recovery_.shape[1])
        throw std::invalid_argument("image encoder: offset dim " + std::to_string(offset_.numel()) +
                                    " does not match recovery input dim " + std::to_string(recovery_.shape[1]));
    if (embed_.shape[1] != recovery_.shape[0])
        throw std::invalid_argument("image encoder: embed input dim " + std::to_string(embed_.shape[1]) +
                                    " does not match recovery output dim " + std::to_string(recovery_.shape[0]));
    if (anchor_.numel() != embed_.shape[0])
        throw std::invalid_argument("image encoder: anchor dim " + std::to_string(anchor_.numel()) +
                                    " does not match embed dim " + std::to_string(embed_.shape[0]));
}

ValueId ImageEncoder::encode_on_tape(Tape& tape, ValueId image) const {
    const Tensor& x = tape.val(image);
    if (x.numel() != input_dim())
        throw std::invalid_argument("encode_image: image has " + std::to_string(x.numel()) +
                                    " pixels, encoder expects " + std::to_string(input_dim()));
    ValueId flat = tape.reshape(image, {input_dim()});
    ValueId pre = pre_ == Preprocess::Logit ? tape.logit(flat) : flat;
    ValueId centered = tape.reshape(tape.sub(pre, tape.leaf(offset_)), {input_dim(), 1});
    ValueId coords = tape.matmul(tape.leaf(recovery_), centered);
    ValueId e = tape.add(tape.reshape(tape.matmul(tape.leaf(embed_), coords), {dim()}), tape.leaf(anchor_));
    return l2_normalize(tape, e);
}

std::vector<float> ImageEncoder::encode(const Tensor& image) const {
    Tape tape;
    return tape.val(encode_on_tape(tape, tape.leaf(image))).data;
}

TextEncoder::TextEncoder(std::map<std::string, int> vocab, int coord_dim, Tensor embed, Tensor anchor, uint64_t seed)
    : vocab_(std::move(vocab)), coord_dim_(coord_dim), embed_(std::move(embed)), anchor_(std::move(anchor)),
      seed_(seed) {
    for (const auto& [phrase, axis] : vocab_)
        if (axis < 0 || axis >= coord_dim_)
            throw std::invalid_argument("vocab: axis " + std::to_string(axis) + " for phrase '" + phrase +
                                        "' outside [0," + std::to_string(coord_dim_) + ")");
}

std::string TextEncoder::prompt_base(const std::string& cls) { return "an image of " + cls; }
std::string TextEncoder::prompt_attr(const std::string& cls, const std::string& attr) {
    return "an image of " + cls + ", " + attr;
}

std::vector<float> TextEncoder::phrase_code(const std::string& phrase) const {
    std::vector<float> code(static_cast<size_t>(coord_dim_), 0.0f);
    auto it = vocab_.find(phrase);
    if (it != vocab_.end()) {
        code[static_cast<size_t>(it->second)] = 1.0f;
        return code;
    }
    // Unknown phrase: stable seeded unit direction (recomputed per call, so
    // the encoder stays immutable and thread-safe).
    Rng rng = Rng(seed_ ^ fnv1a(phrase)).derive("text-phrase");
    for (auto& v : code) v = static_cast<float>(rng.normal());
    return l2_normalize(code);
}

namespace {

std::vector<float> project(const Tensor& q, const std::vector<float>& code) {
    const int dim = q.shape[0], k = q.shape[1];
    std::vector<float> out(static_cast<size_t>(dim), 0.0f);
    for (int d = 0; d < dim; ++d) {
        double acc = 0.0;
        for (int c = 0; c < k; ++c) acc += static_cast<double>(q.data[static_cast<size_t>(d) * k + c]) *
                                           code[static_cast<size_t>(c)];
        out[static_cast<size_t>(d)] = static_cast<float>(acc);
    }
    return out;
}

}  // namespace

namespace {

std::vector<float> add_anchor(std::vector<float> v, const Tensor& anchor) {
    for (size_t i = 0; i < v.size(); ++i) v[i] += anchor.data[i];
    return v;
}

}  // namespace

std::vector<float> TextEncoder::encode_base(const std::string& cls) const {
    return l2_normalize(add_anchor(project(embed_, phrase_code(cls)), anchor_));
}

std::vector<float> TextEncoder::encode_attr(const std::string& cls, const std::string& attr) const {
    std::vector<float> code = phrase_code(cls);
    std::vector<float> a = phrase_code(attr);
    for (size_t i = 0; i < code.size(); ++i) code[i] += a[i];
    return l2_normalize(add_anchor(project(embed_, code), anchor_));
}

std::vector<float> TextEncoder::encode_bare(const std::string& phrase) const {
    return l2_normalize(add_anchor(project(embed_, phrase_code(phrase)), anchor_));
}

JointEncoders make_oracle_encoders(const Backend& backend, const std::map<std::string, int>& vocab, int dim,
                                   uint64_t seed) {
    const int k = backend.attrs();
    Tensor cols = orthonormal_embed(dim, k + 1, seed);
    Tensor q = Tensor::zeros({dim, k});
    Tensor anchor = Tensor::zeros({dim});
    for (int d = 0; d < dim; ++d) {
        for (int c = 0; c < k; ++c) q.data[static_cast<size_t>(d) * k + c] = cols.data[static_cast<size_t>(d) * (k + 1) + c];
        anchor.data[static_cast<size_t>(d)] = kAnchorScale * cols.data[static_cast<size_t>(d) * (k + 1) + k];
    }
    ImageEncoder image(ImageEncoder::Mode::Oracle, ImageEncoder::Preprocess::Logit,
                       pseudo_inverse_rows(backend.basis_matrix()), backend.bias_image(), q, anchor, seed);
    TextEncoder text(vocab, k, std::move(q), std::move(anchor), seed);
    return {std::move(image), std::move(text)};
}

ValueId zero_shot_on_tape(Tape& tape, const ImageEncoder& enc_i, const TextEncoder& enc_t, ValueId image,
                          const std::vector<std::string>& labels, float tau) {
    if (labels.size() < 2) throw std::invalid_argument("zero_shot: need at least 2 class names");
    ValueId h = enc_i.encode_on_tape(tape, image);
    std::vector<ValueId> logits;
    logits.reserve(labels.size());
    for (const auto& name : labels) {
        ValueId t = tape.leaf(Tensor::row(enc_t.encode_base(name)));
        logits.push_back(tape.sum(tape.mul(h, t)));
    }
    return tape.softmax(tape.scale(tape.concat(logits), tau));
}

std::vector<float> zero_shot_classify(const ImageEncoder& enc_i, const TextEncoder& enc_t, const Tensor& image,
                                      const std::vector<std::string>& labels, float tau) {
    Tape tape;
    return tape.val(zero_shot_on_tape(tape, enc_i, enc_t, tape.leaf(image), labels, tau)).data;
}

std::map<std::string, int> load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocab: cannot open " + path);
    std::map<std::string, int> vocab;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("vocab: line " + std::to_string(lineno) + " has no tab separator");
        const std::string phrase = line.substr(0, tab);
        const int axis = std::stoi(line.substr(tab + 1));
        vocab[phrase] = axis;
    }
    return vocab;
}

void save_image_encoder(const ImageEncoder& enc, const std::string& dir) {
    fs::create_directories(dir);
    ordered_json m;
    m["kind"] = "image";
    m["mode"] = enc.mode() == ImageEncoder::Mode::Oracle ? "oracle" : "loaded";
    m["preprocess"] = enc.preprocess() == ImageEncoder::Preprocess::Logit ? "logit" : "none";
    m["input_dim"] = enc.input_dim();
    m["coord_dim"] = enc.coord_dim();
    m["dim"] = enc.dim();
    m["seed"] = enc.seed();
    m["tensors"] = {{"recovery", "recovery.umot"},
                    {"offset", "offset.umot"},
                    {"embed", "embed.umot"},
                    {"anchor", "anchor.umot"}};
    std::ofstream out(fs::path(dir) / "encoder.json");
    out << m.dump(2) << "\n";
    save_umot(enc.recovery(), (fs::path(dir) / "recovery.umot").string());
    save_umot(enc.offset(), (fs::path(dir) / "offset.umot").string());
    save_umot(enc.embed_map(), (fs::path(dir) / "embed.umot").string());
    save_umot(enc.anchor(), (fs::path(dir) / "anchor.umot").string());
}

void save_text_encoder(const TextEncoder& enc, const std::string& dir) {
    fs::create_directories(dir);
    ordered_json m;
    m["kind"] = "text";
    m["coord_dim"] = enc.coord_dim();
    m["dim"] = enc.dim();
    m["seed"] = enc.seed();
    m["vocab"] = ordered_json::object();
    for (const auto& [phrase, axis] : enc.vocab()) m["vocab"][phrase] = axis;
    m["tensors"] = {{"embed", "embed.umot"}, {"anchor", "anchor.umot"}};
    std::ofstream out(fs::path(dir) / "encoder.json");
    out << m.dump(2) << "\n";
    save_umot(enc.embed_map(), (fs::path(dir) / "embed.umot").string());
    save_umot(enc.anchor(), (fs::path(dir) / "anchor.umot").string());
}

std::variant<ImageEncoder, TextEncoder> load_encoder(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "encoder.json";
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("encoder: cannot open " + mpath.string());
    ordered_json m = ordered_json::parse(in, nullptr, true);
    const std::string kind = m.at("kind").get<std::string>();
    if (kind == "image") {
        Tensor recovery = load_umot((fs::path(dir) / m.at("tensors").at("recovery").get<std::string>()).string());
        Tensor offset = load_umot((fs::path(dir) / m.at("tensors").at("offset").get<std::string>()).string());
        Tensor embed = load_umot((fs::path(dir) / m.at("tensors").at("embed").get<std::string>()).string());
        Tensor anchor = load_umot((fs::path(dir) / m.at("tensors").at("anchor").get<std::string>()).string());
        const int in_dim = m.at("input_dim").get<int>();
        const int coord = m.at("coord_dim").get<int>();
        const int dim = m.at("dim").get<int>();
        if (recovery.shape != std::vector<int>{coord, in_dim})
            throw std::runtime_error("encoder: recovery shape " + shape_str(recovery.shape) +
                                     " does not match manifest dims [" + std::to_string(coord) + "," +
                                     std::to_string(in_dim) + "]");
        if (embed.shape != std::vector<int>{dim, coord})
            throw std::runtime_error("encoder: embed shape " + shape_str(embed.shape) +
                                     " does not match manifest dims [" + std::to_string(dim) + "," +
                                     std::to_string(coord) + "]");
        const auto mode = m.at("mode").get<std::string>() == "oracle" ? ImageEncoder::Mode::Oracle
                                                                      : ImageEncoder::Mode::Loaded;
        const auto pre = m.at("preprocess").get<std::string>() == "logit" ? ImageEncoder::Preprocess::Logit
                                                                          : ImageEncoder::Preprocess::None;
        return ImageEncoder(mode, pre, std::move(recovery), std::move(offset), std::move(embed), std::move(anchor),
                            m.at("seed").get<uint64_t>());
    }
    if (kind == "text") {
        Tensor embed = load_umot((fs::path(dir) / m.at("tensors").at("embed").get<std::string>()).string());
        Tensor anchor = load_umot((fs::path(dir) / m.at("tensors").at("anchor").get<std::string>()).string());
        std::map<std::string, int> vocab;
        for (const auto& [phrase, axis] : m.at("vocab").items()) vocab[phrase] = axis.get<int>();
        return TextEncoder(std::move(vocab), m.at("coord_dim").get<int>(), std::move(embed), std::move(anchor),
                           m.at("seed").get<uint64_t>());
    }
    throw std::runtime_error("encoder: unknown kind '" + kind + "' in " + mpath.string());
}

}  // namespace umo
