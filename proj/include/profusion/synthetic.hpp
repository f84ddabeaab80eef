#pragma once

#include "profusion/rng.hpp"
#include "profusion/tensor.hpp"

#include <string>
#include <vector>

namespace profusion {

// Lattice classification task. Modality 1 samples a fresh random smooth
// function on D lattice points; modality 2 is a sinusoidal embedding of a
// random lattice index; the label is the first nonzero decimal digit of the
// function value at that index.
struct LatticeTaskConfig {
    int D = 16;          // function sample count (modality-1 dim)
    int M = 8;           // sine mixture components
    double f_max = 3.0;  // max component frequency
    int p = 16;          // position embedding dim
    int n_train = 4000;
    int n_val = 1000;
    int n_test = 2000;
    std::uint64_t seed = 0;
};

// Latent-factor regression task. Both modalities are noisy views of a shared
// uniform latent; the target is linear in the latent.
struct GenerativeTaskConfig {
    int d_z = 8;
    int D1 = 16;
    int D2 = 16;
    int K_y = 4;
    double eta = 0.0;      // corruption strength in modality 1
    double sigma2 = 0.0;   // noise scale in modality 2
    int n_train = 4000;
    int n_val = 1000;
    int n_test = 2000;
    std::uint64_t seed = 0;
};

enum class TaskKind { Classification, Regression };

struct SyntheticDataset {
    Mat X1;
    Mat X2;
    Mat Y;                       // regression targets, N x K_y
    std::vector<int> labels;     // class indices for classification
    TaskKind kind = TaskKind::Classification;
    int num_classes = 0;

    int size() const { return X1.rows; }
};

// A train/val/test triple drawn from one task configuration.
struct DatasetSplits {
    SyntheticDataset train;
    SyntheticDataset val;
    SyntheticDataset test;
};

// Test-time corruption schedule: ascending noise levels starting at 0 and the
// modalities they apply to.
struct NoiseSpec {
    std::vector<double> grid;
    std::vector<int> modalities{1, 2};
};

NoiseSpec make_noise_grid(double sigma_max, int m, std::vector<int> modalities = {1, 2});
void validate_noise(const NoiseSpec& spec);

// First nonzero decimal digit of |v| (1..9). v must be nonzero.
int first_nonzero_digit(double v);

// Sinusoidal position embedding of u in [0,1) with p dims, frequency ladder
// scaled so adjacent lattice points are well separated.
std::vector<double> position_embedding(double u, int p, int D);

SyntheticDataset gen_lattice(const LatticeTaskConfig& cfg, Rng& rng, int n);
DatasetSplits gen_lattice_splits(const LatticeTaskConfig& cfg);

SyntheticDataset gen_generative(const GenerativeTaskConfig& cfg, Rng& rng, int n);
DatasetSplits gen_generative_splits(const GenerativeTaskConfig& cfg);

// Additive Gaussian corruption of the selected modalities (1-based indices
// {1,2}); targets untouched.
SyntheticDataset corrupt(const SyntheticDataset& ds, double sigma,
                         const std::vector<int>& modalities, Rng& rng);

// CSV export/import, 15 significant digits, one-line header.
void save_dataset_csv(const SyntheticDataset& ds, const std::string& path);
SyntheticDataset load_dataset_csv(const std::string& path);

} // namespace profusion
