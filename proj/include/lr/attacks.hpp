#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lr/data.hpp"
#include "lr/nn.hpp"
#include "lr/tensor.hpp"

namespace lr::attacks {

struct AttackConfig {
    enum class Kind { fgsm, bim, pgd };

    Kind kind = Kind::pgd;
    Real epsilon = Real{0.03};  // L-inf budget in pixel units
    Real alpha = Real{0};       // step size; <= 0 selects epsilon / 4
    int iters = 10;
    bool random_start = true;   // distinguishes pgd from bim
    uint64_t seed = 0;

    Real effective_alpha() const { return alpha > Real{0} ? alpha : epsilon / Real{4}; }
    void validate() const;  // throws ConfigError

    static Kind kind_from_name(const std::string& s);
    static const char* kind_name(Kind k);
};

// Successful adversarial images for one attack run, plus the audit trail of
// which eligible (correctly classified) samples the attack flipped.
struct AdversarialSet {
    Tensor images;                      // [M,C,H,W]; undefined when M == 0
    std::vector<int> original_indices;  // size M, into the source dataset
    std::vector<int> labels;            // true labels of the kept samples
    std::vector<int> eligible_indices;  // all correctly classified source indices
    std::vector<uint8_t> success;       // per eligible sample
    AttackConfig config;

    int size() const { return static_cast<int>(original_indices.size()); }
    bool empty() const { return original_indices.empty(); }
};

struct AttackOutcome {
    AdversarialSet adv;
    data::Dataset matched_clean;  // clean counterparts of the kept samples
};

// Single signed-gradient step: clip01(x + eps * sign(grad_x loss)).
// sign(0) = 0. epsilon must lie in [0,1]; epsilon == 0 returns x unchanged.
Tensor attack_fgsm(const nn::ModelGraph& m, const Tensor& x, const std::vector<int>& y,
                   Real epsilon);

// Iterated signed-gradient ascent with projection onto the epsilon-ball and
// the unit box after every step; a seeded uniform start inside the ball when
// config.random_start. `sample_keys` feeds the per-sample substream so the
// result is independent of how a caller batches; defaults to 0..B-1.
Tensor attack_iterative(const nn::ModelGraph& m, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& config, std::span<const int> sample_keys = {});

// Restricts to correctly classified samples, attacks each, and keeps only
// the ones the attack misclassifies. An empty result is a signal, not an
// error.
AttackOutcome build_adversarial_set(const nn::ModelGraph& m, const data::Dataset& clean,
                                    const AttackConfig& config);

// A Dataset view of the adversarial images, flagged as adversarial
// provenance so clean-only consumers can refuse it.
data::Dataset to_dataset(const AdversarialSet& adv, const data::Dataset& source);

// Manifest (JSON) + raw little-endian float32 image blob.
void save_adversarial_set(const AttackOutcome& outcome, const std::string& dir);
AttackOutcome load_adversarial_set(const std::string& dir, const data::Dataset& source);

}  // namespace lr::attacks
