#include <exception>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cpcfg/cli.hpp"

namespace cli = cpcfg::cli;

int main(int argc, char** argv) {
  CLI::App app{"Grammar induction with scalar, neural, and compound PCFGs"};
  app.require_subcommand(1);

  std::ostringstream cmdline;
  for (int i = 0; i < argc; ++i) cmdline << (i ? " " : "") << argv[i];

  cli::TrainArgs train_args;
  train_args.command_line = cmdline.str();
  std::string train_model, train_seed;
  auto* train = app.add_subcommand("train", "Train a model on a bracketed treebank");
  train->add_option("--train", train_args.train_path, "Training treebank file")->required();
  train->add_option("--val", train_args.val_path, "Validation treebank file")->required();
  train->add_option("--config", train_args.config_path, "key=value config file");
  train->add_option("--checkpoint", train_args.checkpoint_path, "Checkpoint output path");
  train->add_option("--model", train_model, "scalar | neural | compound");
  train->add_option("--seed", train_seed, "RNG seed");
  train->add_option("--punct-tags", train_args.punct_tags, "POS tags treated as punctuation");

  cli::ParseArgs parse_args;
  auto* parse = app.add_subcommand("parse", "Parse sentences with a trained model");
  parse->add_option("--checkpoint", parse_args.checkpoint_path, "Model checkpoint")->required();
  parse->add_option("--input", parse_args.input_path, "Sentences file")->required();
  parse->add_option("--out", parse_args.output_path, "Output trees file")->required();
  parse->add_option("--vocab", parse_args.vocab_path, "Vocab file (default <checkpoint>.vocab)");
  parse->add_option("--input-format", parse_args.input_format, "tokens | treebank");
  parse->add_option("--punct-tags", parse_args.punct_tags, "POS tags treated as punctuation");

  cli::EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score predicted trees against gold trees");
  eval->add_option("--pred", eval_args.pred_path, "Predicted trees file")->required();
  eval->add_option("--gold", eval_args.gold_path, "Gold treebank file")->required();
  eval->add_option("--out", eval_args.output_path, "Report output path (default stdout)");
  eval->add_option("--runs", eval_args.run_paths, "Prediction files from multiple runs (self-F1)");
  eval->add_option("--punct-tags", eval_args.punct_tags, "POS tags treated as punctuation");
  eval->add_option("--labels", eval_args.alignment_labels, "Gold labels for the alignment table");
  eval->add_option("--alignment", eval_args.alignment_path, "Alignment table CSV output path");
  eval->add_flag("--baselines", eval_args.baselines, "Include left/right/random baseline rows");
  eval->add_flag("--oracle", eval_args.oracle, "Include right-binarized gold oracle row");
  eval->add_option("--eval-mode", eval_args.eval_mode, "sentence | corpus");
  eval->add_option("--vacuous", eval_args.vacuous, "credit | skip (all-trivial sentences)");
  eval->add_option("--seed", eval_args.seed, "RNG seed for random-tree baselines");
  eval->add_option("--iw-checkpoint", eval_args.iw_checkpoint,
                   "Checkpoint for perplexity (importance-weighted when compound)");
  eval->add_option("--iw-samples", eval_args.iw_samples, "Importance samples per sentence");

  cli::NeighborsArgs nn_args;
  auto* nn = app.add_subcommand("inspect-neighbors",
                                "Nearest neighbors by posterior-mean cosine similarity");
  nn->add_option("--checkpoint", nn_args.checkpoint_path, "Compound checkpoint")->required();
  nn->add_option("--corpus", nn_args.corpus_path, "Corpus file")->required();
  nn->add_option("--vocab", nn_args.vocab_path, "Vocab file (default <checkpoint>.vocab)");
  nn->add_option("--input-format", nn_args.input_format, "tokens | treebank");
  nn->add_option("--punct-tags", nn_args.punct_tags, "POS tags treated as punctuation");
  nn->add_option("--query", nn_args.query_ids, "Query sentence ids")->required();
  nn->add_option("--k", nn_args.k, "Neighbors per query");
  nn->add_option("--out", nn_args.output_path, "Report path (default stdout)");
  nn->add_option("--export-means", nn_args.export_means_path, "Write per-sentence posterior means");

  cli::SubtreePcaArgs pca_args;
  auto* pca = app.add_subcommand("inspect-subtree-pca",
                                 "Top principal component of posterior means per subtree shape");
  pca->add_option("--checkpoint", pca_args.checkpoint_path, "Compound checkpoint")->required();
  pca->add_option("--corpus", pca_args.corpus_path, "Corpus file")->required();
  pca->add_option("--vocab", pca_args.vocab_path, "Vocab file (default <checkpoint>.vocab)");
  pca->add_option("--input-format", pca_args.input_format, "tokens | treebank");
  pca->add_option("--punct-tags", pca_args.punct_tags, "POS tags treated as punctuation");
  pca->add_option("--pattern", pca_args.pattern,
                  "Unlexicalized bracketed subtree, e.g. \"(NT-04 (T-13 w) (NT-12 (T-05 w) (T-41 w)))\"")
      ->required();
  pca->add_option("--top", pca_args.top_m, "Constituents listed per direction");
  pca->add_option("--out", pca_args.output_path, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      if (!train_model.empty()) train_args.model = train_model;
      if (!train_seed.empty()) train_args.seed = std::stoull(train_seed);
      return cli::cmd_train(train_args);
    }
    if (*parse) return cli::cmd_parse(parse_args);
    if (*eval) return cli::cmd_eval(eval_args);
    if (*nn) return cli::cmd_inspect_neighbors(nn_args);
    if (*pca) return cli::cmd_inspect_subtree_pca(pca_args);
  } catch (const cli::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
