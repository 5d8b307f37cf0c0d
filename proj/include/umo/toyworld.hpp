#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umo/rng.hpp"
#include "umo/tape.hpp"
#include "umo/tensor.hpp"

namespace umo {

enum class BackendKind { LinearBasis, MixedBasis };
enum class Task { Binary, Keypoint, Segmentation };

const char* backend_kind_name(BackendKind k);
BackendKind backend_kind_from(const std::string& s);
const char* task_name(Task t);
Task task_from(const std::string& s);

struct BackendSpec {
    BackendKind kind = BackendKind::LinearBasis;
    uint64_t seed = 0;
    int height = 32;
    int width = 32;
    int attr_count = 8;
    float mix_strength = 0.3f;  // mixed-basis only
};

// One generative backbone: K fixed smooth basis images plus a bias image,
// rendered through a sigmoid. The latent space is the attribute cube itself,
// so ground truth stays available for validation. Immutable once built.
class Backend {
  public:
    explicit Backend(const BackendSpec& spec);

    const BackendSpec& spec() const { return spec_; }
    int pixels() const { return spec_.height * spec_.width; }
    int attrs() const { return spec_.attr_count; }

    // Basis image k as an {H, W} tensor.
    Tensor basis_image(int k) const;
    const Tensor& basis_matrix() const { return basis_; }  // [K, HW]
    const Tensor& bias_image() const { return bias_; }     // [HW]
    const Tensor& mixing() const { return mixing_; }       // [K, K], unit spectral norm

    // Differentiable render of style -> {H, W} image on the caller's tape.
    ValueId generate_on_tape(Tape& tape, ValueId style) const;
    // Plain render, routed through the same graph for a single numeric path.
    Tensor generate(const std::vector<float>& style) const;

  private:
    BackendSpec spec_;
    Tensor basis_;
    Tensor bias_;
    Tensor mixing_;
};

Backend make_backend(const BackendSpec& spec);

struct LabelRule {
    Task task = Task::Binary;
    int main_attr = 0;
    int n_keypoints = 5;  // keypoint task
};

struct GroundTruth {
    int cls = 0;                   // binary
    std::vector<float> keypoints;  // 2P interleaved (x, y) in [0,1]^2
    std::vector<int> seg;          // HW class ids
};

// Ground-truth oracle; pure function of the attribute vector (segmentation
// additionally reads the backend's bases).
GroundTruth label(const Backend& backend, const LabelRule& rule, const std::vector<float>& style);

// K iid uniform [0,1] coordinates, rejecting draws within 1e-3 of the 0.5
// label boundary.
std::vector<float> sample_latent(int attr_count, Rng& rng);

struct BiasedDatasetSpec {
    int main_attr = 0;
    int spurious_attr = 1;
    float epsilon = 0.0099f;  // probability the spurious coordinate falls back to uniform
    int n_per_class = 1000;
};

struct Dataset {
    std::vector<std::vector<float>> latents;
    std::vector<GroundTruth> labels;

    size_t size() const { return latents.size(); }
};

// Imbalanced-sampling bias plant: per class, the main coordinate lands on the
// matching side of 0.5; the spurious coordinate is congruent with the class
// with probability 1-eps, otherwise uniform. Expected congruence 1 - eps/2.
Dataset sample_biased_dataset(const Backend& backend, const LabelRule& rule, const BiasedDatasetSpec& spec,
                              Rng& rng);

// Balanced, unbiased set: n/2 samples per class, all non-main coordinates uniform.
Dataset sample_balanced_dataset(const Backend& backend, const LabelRule& rule, int n, Rng& rng);

// Uniform latents, labeled by the oracle (keypoint / segmentation training).
Dataset sample_uniform_dataset(const Backend& backend, const LabelRule& rule, int n, Rng& rng);

// Balanced set restricted to spurious-incongruent samples (bias probes).
Dataset sample_incongruent_dataset(const Backend& backend, const LabelRule& rule, const BiasedDatasetSpec& spec,
                                   int n, Rng& rng);

bool side_of(float coord);  // strict: coord > 0.5

}  // namespace umo
