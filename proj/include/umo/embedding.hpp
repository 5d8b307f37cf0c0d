#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "umo/tape.hpp"
#include "umo/toyworld.hpp"

namespace umo {

// v / ||v||, with a tiny epsilon under the square root.
ValueId l2_normalize(Tape& tape, ValueId v);
std::vector<float> l2_normalize(const std::vector<float>& v);

// Image-side encoder of the joint embedding space. Oracle mode recovers the
// generator's latent coordinates by least squares against the backend's bases
// (on logit-transformed pixels), then projects through a seeded orthonormal
// map Q into D dimensions. Loaded mode applies an arbitrary affine map from a
// manifest. Immutable; concurrent encoding is safe.
class ImageEncoder {
  public:
    enum class Mode { Oracle, Loaded };
    enum class Preprocess { Logit, None };

    ImageEncoder(Mode mode, Preprocess pre, Tensor recovery, Tensor offset, Tensor embed, Tensor anchor,
                 uint64_t seed);

    Mode mode() const { return mode_; }
    int input_dim() const { return recovery_.shape[1]; }
    int coord_dim() const { return recovery_.shape[0]; }
    int dim() const { return embed_.shape[0]; }
    uint64_t seed() const { return seed_; }
    Preprocess preprocess() const { return pre_; }
    const Tensor& recovery() const { return recovery_; }
    const Tensor& offset() const { return offset_; }
    const Tensor& embed_map() const { return embed_; }
    const Tensor& anchor() const { return anchor_; }

    // h = normalize(Q * R(x) + anchor); differentiable w.r.t. the image.
    // The anchor is a constant off-span direction shared with the text side;
    // it keeps embeddings on a cap of the sphere so that normalized
    // differences stay faithful to the underlying coordinate change.
    ValueId encode_on_tape(Tape& tape, ValueId image) const;
    std::vector<float> encode(const Tensor& image) const;

  private:
    Mode mode_;
    Preprocess pre_;
    Tensor recovery_;  // [K, HW]
    Tensor offset_;    // [HW]
    Tensor embed_;     // [D, K]
    Tensor anchor_;    // [D]
    uint64_t seed_;
};

// Text-side encoder: phrases map to K-dim semantic coordinates (world
// attributes to unit axes via the vocabulary, anything else to a stable
// seeded unit vector), then through the same Q as the image side.
class TextEncoder {
  public:
    TextEncoder(std::map<std::string, int> vocab, int coord_dim, Tensor embed, Tensor anchor, uint64_t seed);

    int coord_dim() const { return coord_dim_; }
    int dim() const { return embed_.shape[0]; }
    uint64_t seed() const { return seed_; }
    const Tensor& embed_map() const { return embed_; }
    const Tensor& anchor() const { return anchor_; }
    const std::map<std::string, int>& vocab() const { return vocab_; }

    static std::string prompt_base(const std::string& cls);
    static std::string prompt_attr(const std::string& cls, const std::string& attr);

    // normalize(Q * vocab(cls)) — the base prompt "an image of [cls]".
    std::vector<float> encode_base(const std::string& cls) const;
    // normalize(Q * (vocab(cls) + vocab(attr))) — "an image of [cls], [attr]".
    std::vector<float> encode_attr(const std::string& cls, const std::string& attr) const;
    // normalize(Q * vocab(phrase)) — bare phrase, used by the uniqueness score.
    std::vector<float> encode_bare(const std::string& phrase) const;

    // K-dim semantic code for a phrase (unit vector).
    std::vector<float> phrase_code(const std::string& phrase) const;

  private:
    std::map<std::string, int> vocab_;
    int coord_dim_;
    Tensor embed_;   // [D, K]
    Tensor anchor_;  // [D]
    uint64_t seed_;
};

// Both sides of the joint space share the projection Q derived from one seed.
struct JointEncoders {
    ImageEncoder image;
    TextEncoder text;
};

JointEncoders make_oracle_encoders(const Backend& backend, const std::map<std::string, int>& vocab, int dim,
                                   uint64_t seed);

// softmax(tau * cos(E_I(x), E_T(base prompt of t))) over t in labels.
ValueId zero_shot_on_tape(Tape& tape, const ImageEncoder& enc_i, const TextEncoder& enc_t, ValueId image,
                          const std::vector<std::string>& labels, float tau);
std::vector<float> zero_shot_classify(const ImageEncoder& enc_i, const TextEncoder& enc_t, const Tensor& image,
                                      const std::vector<std::string>& labels, float tau);

// Vocabulary file: UTF-8 lines "phrase<TAB>axis", '#' comments ignored.
std::map<std::string, int> load_vocab(const std::string& path);

// Encoder manifest: JSON header plus UMOT tensors in the same directory.
void save_image_encoder(const ImageEncoder& enc, const std::string& dir);
void save_text_encoder(const TextEncoder& enc, const std::string& dir);
std::variant<ImageEncoder, TextEncoder> load_encoder(const std::string& dir);

}  // namespace umo
