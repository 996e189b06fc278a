#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thzce/system_config.hpp"
#include "thzce/training.hpp"
#include "thzce/types.hpp"

namespace thzce {

// Samples sharing one (M, SNR) configuration and one pilot matrix.
struct DatasetGroup
{
    int M = 0;
    double snr_db = 0.0;
    RMat W;              // M x N
    std::vector<CMat> H; // N x K each
    std::vector<CMat> Y; // M x K each

    int count() const { return static_cast<int>(H.size()); }
};

// One split on disk: manifest.txt plus float64 blobs (complex arrays interleaved re/im,
// row-major [sample][row][subcarrier]).
struct Dataset
{
    SystemConfig cfg;
    std::string split;
    std::vector<DatasetGroup> groups;

    int size() const;
};

struct SplitCounts
{
    int train = 0;
    int val = 0;
    int test = 0;
};

enum class Split : std::uint64_t
{
    train = 1,
    val = 2,
    test = 3,
};

const char *split_name(Split split);

// Pilot matrix shared by every split and sample with this M.
RMat pilot_matrix_for(const SystemConfig &cfg, int M);

// Draws `count` samples per grid configuration; sample i of a configuration depends only
// on (seed, split, M, SNR, i).
Dataset generate_split(const SystemConfig &cfg, Split split, int count, std::span<const ConfigKey> grid);

void save_dataset(const Dataset &data, const std::filesystem::path &dir);
// Checks every blob length against the manifest shapes.
Dataset load_dataset(const std::filesystem::path &dir);

// Writes dir/train, dir/val and dir/test.
void generate_dataset(const SystemConfig &cfg, const SplitCounts &counts, std::span<const ConfigKey> grid,
                      const std::filesystem::path &dir);

// Serialised SystemConfig lines ("config <field> <value>"), shared with model metadata.
std::vector<std::pair<std::string, std::string>> config_fields(const SystemConfig &cfg);
void set_config_field(SystemConfig &cfg, const std::string &name, const std::string &value);

// Training view of a split: pilot setups per M on the polar dictionary, whitened observations.
Corpus make_corpus(const SystemConfig &cfg, std::span<const Dataset *const> splits);
std::vector<TrainingSample> training_samples(const Dataset &data, const Corpus &corpus);

} // namespace thzce
