#pragma once

#include <string>
#include <vector>

#include "umo/tape.hpp"
#include "umo/toyworld.hpp"

namespace umo {

struct TrainConfig {
    float lr = 0.05f;
    int epochs = 40;
    int batch_size = 64;
    uint64_t seed = 0;
    float early_stop_accuracy = 0.95f;
    int hidden_width = 32;
    int val_size = 512;
};

struct TrainMetrics {
    double final_val_accuracy = 0.0;
    int epochs_run = 0;
    bool reached_threshold = false;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_val_accuracy;
};

// Typed inference output.
struct Prediction {
    Task task = Task::Binary;
    float prob = 0.0f;              // binary: sigmoid score
    std::vector<float> keypoints;   // keypoint: 2P values in [0,1]
    Tensor pixel_probs;             // segmentation: [HW, C], rows sum to 1
};

// Tape handles for a differentiable forward pass.
struct ForwardIds {
    ValueId logits = -1;  // binary: [B,1]; keypoint: pre-sigmoid [B,2P]; segmentation: [B*HW, C]
    ValueId output = -1;  // binary: sigmoid [B,1]; keypoint: sigmoid [B,2P]; segmentation: softmax [B*HW, C]
};

// Dense tanh MLP under diagnosis: one hidden layer, task-specific head.
// Immutable after training; predict is safe from concurrent callers.
struct TargetModel {
    Task task = Task::Binary;
    int in_h = 0, in_w = 0;
    int hidden = 32;
    int n_points = 0;   // keypoint
    int n_classes = 0;  // segmentation
    uint64_t seed = 0;
    Tensor w1, b1, w2, b2;
    TrainMetrics metrics;

    int input_dim() const { return in_h * in_w; }
    int output_dim() const;

    // images: [B, in] on the tape (already flattened).
    ForwardIds forward(Tape& tape, ValueId images, int batch) const;
    Prediction predict(const Tensor& image) const;  // image {H, W}
};

TargetModel init_target_model(Task task, const Backend& backend, const LabelRule& rule, const TrainConfig& cfg);

// SGD training against the dataset's oracle labels; early-stops on a balanced
// validation split drawn fresh from the world (never the biased training set).
TargetModel train_target(const Backend& backend, const LabelRule& rule, const Dataset& train, const TrainConfig& cfg);

// One further pass over a fixed batch of labeled images (hardening rounds).
void finetune(TargetModel& model, const Backend& backend, const Dataset& batch, float lr, int epochs, int batch_size,
              uint64_t seed);

// Fraction correct; keypoint counts a sample correct when the mean point
// displacement is <= 0.05, segmentation scores mean pixel accuracy.
double task_accuracy(const TargetModel& model, const Backend& backend, const Dataset& ds);

// Eq. 2 target: 1 - f(x), held constant afterwards.
float pseudo_label_binary(const TargetModel& model, const Tensor& image);

struct SimilarityTransform {
    float tx = 0.0f, ty = 0.0f;
    float angle_rad = 0.0f;
    float scale = 1.0f;
};

// One global draw per optimization run: translation U[-0.2,0.2]^2, rotation
// U[-30deg,30deg] about the image center, isotropic scale U[0.8,1.25].
SimilarityTransform sample_similarity_transform(Rng& rng);
std::vector<float> pseudo_label_keypoint(const std::vector<float>& gt_keypoints, const SimilarityTransform& t);

// Per-pixel second-most-probable class; ties toward the larger class index.
std::vector<int> pseudo_label_segmentation(const TargetModel& model, const Tensor& image);
std::vector<int> second_argmax_rows(const Tensor& probs);

// Checkpoint directory: manifest.json plus weights as UMOT tensors.
void save_checkpoint(const TargetModel& model, const std::string& dir);
TargetModel load_checkpoint(const std::string& dir);

}  // namespace umo
