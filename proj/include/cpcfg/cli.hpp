#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpcfg::cli {

/// Input problems (missing files, bad flags, misaligned corpora) exit 2;
/// anything else that throws exits 1.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainArgs {
  std::string train_path;
  std::string val_path;
  std::string config_path;
  std::string checkpoint_path;
  std::optional<std::string> model;
  std::optional<uint64_t> seed;
  std::vector<std::string> punct_tags;
  std::string command_line;
};

struct ParseArgs {
  std::string checkpoint_path;
  std::string input_path;
  std::string output_path;
  std::string vocab_path;          // defaults to <checkpoint>.vocab
  std::string input_format = "tokens";  // tokens | treebank
  std::vector<std::string> punct_tags;
};

struct EvalArgs {
  std::string pred_path;
  std::string gold_path;
  std::string output_path;
  std::vector<std::string> run_paths;  // extra runs for self-F1
  std::vector<std::string> punct_tags;
  std::vector<std::string> alignment_labels = {"S", "SBAR", "NP", "VP", "PP", "ADJP", "ADVP"};
  std::string alignment_path;
  bool baselines = false;
  bool oracle = false;
  std::string eval_mode = "sentence";  // sentence | corpus
  std::string vacuous = "credit";      // credit | skip
  uint64_t seed = 1;
  std::string iw_checkpoint;  // when set, report perplexity of this model
  int64_t iw_samples = 1000;
};

struct NeighborsArgs {
  std::string checkpoint_path;
  std::string corpus_path;
  std::string vocab_path;
  std::string input_format = "tokens";
  std::vector<std::string> punct_tags;
  std::vector<int64_t> query_ids;
  int64_t k = 5;
  std::string output_path;
  std::string export_means_path;
};

struct SubtreePcaArgs {
  std::string checkpoint_path;
  std::string corpus_path;
  std::string vocab_path;
  std::string input_format = "tokens";
  std::vector<std::string> punct_tags;
  std::string pattern;
  int64_t top_m = 5;
  std::string output_path;
};

int cmd_train(const TrainArgs& args);
int cmd_parse(const ParseArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_inspect_neighbors(const NeighborsArgs& args);
int cmd_inspect_subtree_pca(const SubtreePcaArgs& args);

/// FNV-1a 64-bit over a file's bytes, for run manifests.
uint64_t file_hash(const std::string& path);

/// Top principal component by power iteration on centered vectors.
/// Returns the component (sign: largest-magnitude loading positive) and the
/// per-vector projections. degenerate is set when the data has ~zero
/// variance, in which case projections are all zero.
struct PcaResult {
  std::vector<double> component;
  std::vector<double> projections;
  bool degenerate = false;
  int iterations = 0;
};
PcaResult top_principal_component(const std::vector<std::vector<double>>& vectors,
                                  double tol = 1e-8, int max_iters = 1000);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cpcfg::cli
