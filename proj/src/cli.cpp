#include "cpcfg/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cpcfg/eval.hpp"
#include "cpcfg/trainer.hpp"

namespace cpcfg::cli {

namespace {

std::string read_file(const std::string& path, const char* what) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError(std::string(what) + " not readable: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

std::set<std::string> punct_set(const std::vector<std::string>& tags) {
  if (tags.empty()) return default_punct_tags();
  return {tags.begin(), tags.end()};
}

std::string lowercased(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

struct LoadedCorpus {
  std::vector<std::vector<std::string>> tokens;  // preprocessed surface tokens
  std::vector<Sentence> ids;
  std::vector<ProcessedExample> examples;  // only for treebank inputs
  int64_t oov = 0;
};

/// Reads either a tokens-per-line file or a bracketed treebank, mapping
/// tokens through the vocabulary (OOV -> unk), lowercasing to match training
/// preprocessing.
LoadedCorpus load_corpus(const std::string& path, const std::string& format, const Vocab& vocab,
                         const std::set<std::string>& punct) {
  LoadedCorpus out;
  if (format == "treebank") {
    auto trees = read_bracketed(read_file(path, "corpus file"));
    PreprocessOptions opts;
    opts.punct_tags = punct;
    auto pre = preprocess_with_vocab(trees, vocab, opts);
    out.examples = std::move(pre.examples);
    for (const auto& ex : out.examples) {
      out.tokens.push_back(ex.tokens);
      out.ids.push_back(ex.ids);
      for (int64_t id : ex.ids)
        if (id == Vocab::kUnkId) ++out.oov;
    }
    return out;
  }
  if (format != "tokens") throw UsageError("unknown input format: " + format);
  std::istringstream is(read_file(path, "corpus file"));
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) toks.push_back(lowercased(tok));
    if (toks.empty()) continue;
    Sentence ids;
    for (const auto& t : toks) {
      ids.push_back(vocab.id_of(t));
      if (ids.back() == Vocab::kUnkId && t != Vocab::kUnkToken) ++out.oov;
    }
    out.tokens.push_back(std::move(toks));
    out.ids.push_back(std::move(ids));
  }
  return out;
}

std::string sibling_path(const std::string& base, const char* suffix) { return base + suffix; }

std::vector<double> posterior_mean(const Model& model, const Sentence& x) {
  Tape tape(false);
  return encode(tape, x, model.encoder).mean->data;
}

/// Unlexicalized bracketing of the subtree rooted at node: terminals render
/// as a placeholder so shapes compare independent of words.
std::string unlex_subtree(const Tree& tree, int node, int64_t num_nonterminals) {
  const Tree::Node& n = tree.nodes[static_cast<size_t>(node)];
  if (n.preterminal)
    return "(" + symbol_name(n.symbol + num_nonterminals, num_nonterminals) + " \xc2\xb7)";
  return "(" + symbol_name(n.symbol, num_nonterminals) + " " +
         unlex_subtree(tree, n.left, num_nonterminals) + " " +
         unlex_subtree(tree, n.right, num_nonterminals) + ")";
}

std::string unlex_pattern(const RawTree& t) {
  if (t.is_leaf()) return "(" + t.label + " \xc2\xb7)";
  std::string out = "(" + t.label;
  for (const auto& c : t.children) out += " " + unlex_pattern(c);
  return out + ")";
}

}  // namespace

uint64_t file_hash(const std::string& path) {
  const std::string bytes = read_file(path, "file");
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;  // zero-vector convention
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

PcaResult top_principal_component(const std::vector<std::vector<double>>& vectors, double tol,
                                  int max_iters) {
  if (vectors.size() < 2) throw std::runtime_error("top_principal_component: need >= 2 vectors");
  const size_t m = vectors.size(), d = vectors[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors)
    for (size_t c = 0; c < d; ++c) mean[c] += v[c];
  for (double& v : mean) v /= static_cast<double>(m);
  std::vector<std::vector<double>> centered(m, std::vector<double>(d));
  double total_var = 0.0;
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < d; ++c) {
      centered[r][c] = vectors[r][c] - mean[c];
      total_var += centered[r][c] * centered[r][c];
    }

  PcaResult result;
  result.projections.assign(m, 0.0);
  if (total_var / static_cast<double>(m) < 1e-24) {
    result.degenerate = true;
    result.component.assign(d, 0.0);
    return result;
  }

  auto apply_cov = [&](const std::vector<double>& v) {
    std::vector<double> xv(m, 0.0);
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < d; ++c) xv[r] += centered[r][c] * v[c];
    std::vector<double> out(d, 0.0);
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < d; ++c) out[c] += centered[r][c] * xv[r];
    const double denom = static_cast<double>(m - 1);
    for (double& o : out) o /= denom;
    return out;
  };

  Rng rng(0x70ca);
  std::vector<double> v(d);
  double norm = 0.0;
  for (size_t c = 0; c < d; ++c) {
    v[c] = rng.normal();
    norm += v[c] * v[c];
  }
  for (double& x : v) x /= std::sqrt(norm);

  double residual = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    auto w = apply_cov(v);
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    if (wn == 0.0) {
      result.degenerate = true;
      result.component.assign(d, 0.0);
      return result;
    }
    for (double& x : w) x /= wn;
    double diff_plus = 0.0, diff_minus = 0.0;
    for (size_t c = 0; c < d; ++c) {
      diff_plus += (w[c] - v[c]) * (w[c] - v[c]);
      diff_minus += (w[c] + v[c]) * (w[c] + v[c]);
    }
    residual = std::sqrt(std::min(diff_plus, diff_minus));
    v = std::move(w);
    result.iterations = it;
    if (residual < tol) break;
    if (it == max_iters) {
      std::ostringstream os;
      os << "top_principal_component: power iteration failed to converge after " << max_iters
         << " iterations (residual " << residual << ")";
      throw std::runtime_error(os.str());
    }
  }

  // Largest-magnitude loading oriented positive.
  size_t arg = 0;
  for (size_t c = 1; c < d; ++c)
    if (std::abs(v[c]) > std::abs(v[arg])) arg = c;
  if (v[arg] < 0)
    for (double& x : v) x = -x;

  result.component = v;
  for (size_t r = 0; r < m; ++r) {
    double p = 0.0;
    for (size_t c = 0; c < d; ++c) p += centered[r][c] * v[c];
    result.projections[r] = p;
  }
  return result;
}

int cmd_train(const TrainArgs& args) {
  TrainConfig config;
  if (!args.config_path.empty())
    config = TrainConfig::deserialize(read_file(args.config_path, "config file"));
  if (args.model) config.model = model_kind_from_name(*args.model);
  if (args.seed) config.seed = *args.seed;
  if (!args.checkpoint_path.empty()) config.checkpoint_path = args.checkpoint_path;
  config.validate();

  PreprocessOptions opts;
  opts.vocab_cap = config.vocab_cap;
  opts.punct_tags = punct_set(args.punct_tags);

  auto train_trees = read_bracketed(read_file(args.train_path, "train corpus"));
  auto val_trees = read_bracketed(read_file(args.val_path, "validation corpus"));
  auto train_pre = preprocess(train_trees, opts);
  auto val_pre = preprocess_with_vocab(val_trees, train_pre.vocab, opts);

  std::vector<Sentence> train_sents, val_sents;
  for (const auto& ex : train_pre.examples) train_sents.push_back(ex.ids);
  for (const auto& ex : val_pre.examples) val_sents.push_back(ex.ids);
  const int64_t vocab_size = static_cast<int64_t>(train_pre.vocab.size());

  std::cerr << "training " << model_kind_name(config.model) << " model on "
            << train_sents.size() << " sentences (vocab " << vocab_size << ", "
            << val_sents.size() << " validation)\n";
  auto result = train(config, train_sents, val_sents, vocab_size);

  const std::string& ckpt = config.checkpoint_path;
  save_checkpoint(result.model, ckpt);
  train_pre.vocab.save(sibling_path(ckpt, ".vocab"));
  write_ids_file(train_pre.examples, sibling_path(ckpt, ".train.ids"));
  write_ids_file(val_pre.examples, sibling_path(ckpt, ".val.ids"));
  write_gold_spans_file(train_pre.examples, sibling_path(ckpt, ".train.spans"));
  write_gold_spans_file(val_pre.examples, sibling_path(ckpt, ".val.spans"));

  {
    std::ofstream os(sibling_path(ckpt, ".trainlog"));
    write_train_log(result.log, os);
  }
  {
    std::ofstream os(sibling_path(ckpt, ".manifest"));
    os << "command=" << args.command_line << '\n';
    os << "seed=" << config.seed << '\n';
    os << "checkpoint=" << ckpt << '\n';
    os << std::hex;
    os << "train_corpus_hash=0x" << file_hash(args.train_path) << '\n';
    os << "val_corpus_hash=0x" << file_hash(args.val_path) << '\n';
    os << std::dec;
    os << "best_epoch=" << result.best_epoch << '\n';
    os << "best_val_perplexity=" << result.best_val_perplexity << '\n';
    std::istringstream cfg(config.serialize());
    std::string line;
    while (std::getline(cfg, line)) os << "config." << line << '\n';
  }
  std::cerr << "best epoch " << result.best_epoch << " (validation perplexity "
            << result.best_val_perplexity << "); checkpoint written to " << ckpt << '\n';
  return 0;
}

int cmd_parse(const ParseArgs& args) {
  Model model = load_checkpoint(args.checkpoint_path);
  const std::string vocab_path =
      args.vocab_path.empty() ? sibling_path(args.checkpoint_path, ".vocab") : args.vocab_path;
  Vocab vocab = Vocab::load(vocab_path);
  auto corpus = load_corpus(args.input_path, args.input_format, vocab, punct_set(args.punct_tags));

  std::ofstream os(args.output_path);
  if (!os) throw UsageError("cannot write output file: " + args.output_path);

  RuleLogProbs global_rules;
  Tape rules_tape(false);
  if (model.kind != ModelKind::Compound) global_rules = rule_logprobs(rules_tape, model.grammar);

  int64_t errors = 0;
  for (size_t s = 0; s < corpus.ids.size(); ++s) {
    const Sentence& x = corpus.ids[s];
    if (x.size() < 2) {
      os << "(ERROR sentence-" << s << "-too-short)\n";
      ++errors;
      continue;
    }
    ViterbiParse parse = model.kind == ModelKind::Compound
                             ? map_parse_compound(x, model.grammar, posterior_mean(model, x))
                             : viterbi_parse(x, global_rules);
    os << parse.tree.to_bracketed(corpus.tokens[s], model.spec.num_nonterminals) << '\n';
  }
  if (corpus.oov > 0)
    std::cerr << "warning: " << corpus.oov << " OOV tokens mapped to " << Vocab::kUnkToken << '\n';
  if (errors > 0) std::cerr << "warning: " << errors << " sentences skipped (too short)\n";
  return 0;
}

namespace {

struct PredRun {
  std::vector<SpanSet> spans;
  std::vector<std::vector<PredictedConstituent>> constituents;
  std::vector<std::vector<int64_t>> leaf_tags;  // induced preterminal per token
  std::vector<std::vector<std::string>> yields;
  std::vector<bool> errored;
};

int64_t parse_symbol_id(const std::string& name, const char* prefix) {
  const size_t plen = std::strlen(prefix);
  if (name.size() <= plen || name.compare(0, plen, prefix) != 0) return -1;
  for (size_t i = plen; i < name.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return -1;
  return std::stoll(name.substr(plen)) - 1;
}

PredRun load_pred_run(const std::string& path) {
  PredRun run;
  auto trees = read_bracketed(read_file(path, "prediction file"));
  for (const auto& t : trees) {
    if (t.label == "ERROR") {
      run.spans.emplace_back();
      run.constituents.emplace_back();
      run.leaf_tags.emplace_back();
      run.yields.emplace_back();
      run.errored.push_back(true);
      continue;
    }
    run.errored.push_back(false);
    run.yields.push_back(t.yield());
    SpanSet spans;
    std::vector<PredictedConstituent> consts;
    std::vector<int64_t> tags;
    std::function<int64_t(const RawTree&, int64_t)> rec = [&](const RawTree& node,
                                                              int64_t offset) -> int64_t {
      if (node.is_leaf()) {
        spans.insert({offset, offset});
        tags.push_back(parse_symbol_id(node.label, "T-"));
        return offset + 1;
      }
      int64_t end = offset;
      for (const auto& c : node.children) end = rec(c, end);
      spans.insert({offset, end - 1});
      const int64_t sym = parse_symbol_id(node.label, "NT-");
      consts.push_back({offset, end - 1, sym >= 0 ? sym : 0});
      return end;
    };
    rec(t, 0);
    run.spans.push_back(std::move(spans));
    run.constituents.push_back(std::move(consts));
    run.leaf_tags.push_back(std::move(tags));
  }
  return run;
}

}  // namespace

int cmd_eval(const EvalArgs& args) {
  auto gold_trees = read_bracketed(read_file(args.gold_path, "gold file"));
  PreprocessOptions opts;
  opts.punct_tags = punct_set(args.punct_tags);
  // Vocabulary is irrelevant for span evaluation; an empty vocab maps
  // everything to unk without changing tokens.
  Vocab dummy;
  dummy.tokens.push_back(Vocab::kUnkToken);
  dummy.ids[Vocab::kUnkToken] = 0;
  auto gold = preprocess_with_vocab(gold_trees, dummy, opts);

  PredRun pred = load_pred_run(args.pred_path);
  if (pred.spans.size() != gold.examples.size()) {
    std::ostringstream os;
    os << "misaligned files: " << pred.spans.size() << " predictions vs "
       << gold.examples.size() << " gold sentences";
    throw UsageError(os.str());
  }
  for (size_t s = 0; s < pred.spans.size(); ++s) {
    if (pred.errored[s]) continue;
    const auto& gtoks = gold.examples[s].tokens;
    const auto& ptoks = pred.yields[s];
    bool ok = ptoks.size() == gtoks.size();
    for (size_t t = 0; ok && t < ptoks.size(); ++t)
      ok = ptoks[t] == gtoks[t] || ptoks[t] == Vocab::kUnkToken;
    if (!ok) throw UsageError("misaligned files: first divergent sentence id " + std::to_string(s));
  }

  std::vector<SpanSet> pred_spans;
  std::vector<std::vector<GoldSpan>> gold_spans_list;
  std::vector<int64_t> lens;
  std::vector<std::vector<PredictedConstituent>> consts;
  for (size_t s = 0; s < pred.spans.size(); ++s) {
    if (pred.errored[s]) continue;
    pred_spans.push_back(pred.spans[s]);
    gold_spans_list.push_back(gold.examples[s].gold);
    lens.push_back(static_cast<int64_t>(gold.examples[s].tokens.size()));
    consts.push_back(pred.constituents[s]);
  }

  const VacuousPolicy policy =
      args.vacuous == "skip" ? VacuousPolicy::Skip : VacuousPolicy::FullCredit;
  EvalReport report = evaluate_spans(pred_spans, gold_spans_list, lens, policy);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.output_path.empty()) {
    file.open(args.output_path);
    if (!file) throw UsageError("cannot write report: " + args.output_path);
    out = &file;
  }

  *out << "metric\tvalue\n";
  *out << "eval_mode\t" << args.eval_mode << '\n';
  *out << "sentences\t" << report.sentences << '\n';
  *out << "sentence_f1\t" << report.sentence_f1 << '\n';
  *out << "corpus_f1\t" << report.corpus_f1 << '\n';
  for (const auto& [label, recall] : report.label_recall)
    *out << "label_recall_" << label << '\t' << recall << '\n';

  // Many-to-one preterminal accuracy when predictions carry T- tags.
  bool have_tags = !pred_spans.empty();
  std::vector<std::vector<int64_t>> pred_tags;
  std::vector<std::vector<std::string>> gold_tags;
  for (size_t s = 0; s < pred.spans.size() && have_tags; ++s) {
    if (pred.errored[s]) continue;
    for (int64_t t : pred.leaf_tags[s]) have_tags = have_tags && t >= 0;
    pred_tags.push_back(pred.leaf_tags[s]);
    gold_tags.push_back(gold.examples[s].tags);
  }
  if (have_tags) *out << "many_to_one\t" << many_to_one(pred_tags, gold_tags) << '\n';

  if (args.baselines) {
    Rng rng(args.seed);
    for (auto [kind, name] :
         {std::pair{BaselineKind::LeftBranching, "left_branching"},
          std::pair{BaselineKind::RightBranching, "right_branching"},
          std::pair{BaselineKind::RandomTree, "random_trees"}}) {
      F1Accumulator acc(policy);
      for (size_t s = 0; s < gold_spans_list.size(); ++s)
        acc.add(baseline_spans(kind, lens[s], &rng), spans_of_gold(gold_spans_list[s]), lens[s]);
      *out << "baseline_" << name << "_sentence_f1\t" << acc.sentence_f1() << '\n';
      *out << "baseline_" << name << "_corpus_f1\t" << acc.corpus_f1() << '\n';
    }
  }
  if (args.oracle) {
    // Oracle predictions: right-binarized gold trees, scored against the
    // non-binarized gold spans.
    F1Accumulator oracle_acc(policy);
    size_t kept = 0;
    for (const auto& tree : gold_trees) {
      auto stripped = strip_punctuation(tree, opts.punct_tags);
      if (!stripped || stripped->num_leaves() < 2) continue;
      const auto& ex = gold.examples[kept++];
      auto bin = binarize_right(*stripped);
      oracle_acc.add(spans_of_gold(gold_spans(bin)), spans_of_gold(ex.gold),
                     static_cast<int64_t>(ex.tokens.size()));
    }
    *out << "oracle_sentence_f1\t" << oracle_acc.sentence_f1() << '\n';
    *out << "oracle_corpus_f1\t" << oracle_acc.corpus_f1() << '\n';
  }

  if (args.run_paths.size() >= 2) {
    std::vector<std::vector<SpanSet>> runs;
    for (const auto& rp : args.run_paths) {
      PredRun r = load_pred_run(rp);
      if (r.spans.size() != pred.spans.size())
        throw UsageError("self-F1 run length mismatch: " + rp);
      std::vector<SpanSet> kept;
      for (size_t s = 0; s < r.spans.size(); ++s)
        if (!pred.errored[s]) kept.push_back(r.spans[s]);
      runs.push_back(std::move(kept));
    }
    *out << "self_f1\t" << self_f1(runs, lens, policy) << '\n';
    *out << "self_f1_pairs\t" << runs.size() * (runs.size() - 1) / 2 << '\n';
  }

  if (!args.iw_checkpoint.empty()) {
    Model model = load_checkpoint(args.iw_checkpoint);
    Vocab vocab = Vocab::load(sibling_path(args.iw_checkpoint, ".vocab"));
    std::vector<Sentence> sents;
    for (size_t s = 0; s < gold.examples.size(); ++s) {
      Sentence ids;
      for (const auto& tok : gold.examples[s].tokens) ids.push_back(vocab.id_of(tok));
      sents.push_back(std::move(ids));
    }
    Rng rng(args.seed);
    *out << "perplexity\t" << iw_perplexity(model, sents, args.iw_samples, rng) << '\n';
    *out << "iw_samples\t" << args.iw_samples << '\n';
  }

  if (!args.alignment_path.empty()) {
    auto rows = alignment_table(consts, gold_spans_list, lens, args.alignment_labels);
    std::ofstream csv(args.alignment_path);
    if (!csv) throw UsageError("cannot write alignment table: " + args.alignment_path);
    write_alignment_csv(rows, args.alignment_labels, csv);
  }
  return 0;
}

int cmd_inspect_neighbors(const NeighborsArgs& args) {
  Model model = load_checkpoint(args.checkpoint_path);
  if (model.kind != ModelKind::Compound)
    throw UsageError("inspect-neighbors needs a compound checkpoint (no posterior otherwise)");
  const std::string vocab_path =
      args.vocab_path.empty() ? sibling_path(args.checkpoint_path, ".vocab") : args.vocab_path;
  Vocab vocab = Vocab::load(vocab_path);
  auto corpus = load_corpus(args.corpus_path, args.input_format, vocab, punct_set(args.punct_tags));
  if (corpus.ids.empty()) throw UsageError("empty corpus: " + args.corpus_path);

  std::vector<std::vector<double>> means;
  means.reserve(corpus.ids.size());
  for (const auto& x : corpus.ids) means.push_back(posterior_mean(model, x));

  if (!args.export_means_path.empty()) {
    std::ofstream os(args.export_means_path);
    if (!os) throw UsageError("cannot write means file: " + args.export_means_path);
    os.precision(17);
    for (size_t s = 0; s < means.size(); ++s) {
      os << s;
      for (double v : means[s]) os << ' ' << v;
      os << '\n';
    }
  }

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.output_path.empty()) {
    file.open(args.output_path);
    if (!file) throw UsageError("cannot write report: " + args.output_path);
    out = &file;
  }

  for (int64_t q : args.query_ids) {
    if (q < 0 || q >= static_cast<int64_t>(means.size()))
      throw UsageError("query id out of range: " + std::to_string(q));
    std::vector<std::pair<double, int64_t>> scored;
    for (size_t s = 0; s < means.size(); ++s) {
      if (static_cast<int64_t>(s) == q) continue;
      scored.emplace_back(cosine_similarity(means[static_cast<size_t>(q)], means[s]),
                          static_cast<int64_t>(s));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // ties by sentence id
    });
    *out << "query " << q << ':';
    for (const auto& tok : corpus.tokens[static_cast<size_t>(q)]) *out << ' ' << tok;
    *out << '\n';
    const int64_t k = std::min<int64_t>(args.k, static_cast<int64_t>(scored.size()));
    for (int64_t r = 0; r < k; ++r) {
      *out << "  " << scored[static_cast<size_t>(r)].second << '\t'
           << scored[static_cast<size_t>(r)].first << '\t';
      bool first = true;
      for (const auto& tok : corpus.tokens[static_cast<size_t>(scored[static_cast<size_t>(r)].second)]) {
        if (!first) *out << ' ';
        *out << tok;
        first = false;
      }
      *out << '\n';
    }
  }
  return 0;
}

int cmd_inspect_subtree_pca(const SubtreePcaArgs& args) {
  Model model = load_checkpoint(args.checkpoint_path);
  if (model.kind != ModelKind::Compound)
    throw UsageError("inspect-subtree-pca needs a compound checkpoint");
  const std::string vocab_path =
      args.vocab_path.empty() ? sibling_path(args.checkpoint_path, ".vocab") : args.vocab_path;
  Vocab vocab = Vocab::load(vocab_path);
  auto corpus = load_corpus(args.corpus_path, args.input_format, vocab, punct_set(args.punct_tags));

  auto pattern_trees = read_bracketed(args.pattern);
  if (pattern_trees.size() != 1) throw UsageError("pattern must be a single bracketed subtree");
  const std::string pattern = unlex_pattern(pattern_trees[0]);

  struct Match {
    size_t sentence;
    int64_t i, j;
    std::vector<double> mean;
  };
  std::vector<Match> matches;
  for (size_t s = 0; s < corpus.ids.size(); ++s) {
    const Sentence& x = corpus.ids[s];
    if (x.size() < 2) continue;
    auto mean = posterior_mean(model, x);
    auto parse = map_parse_compound(x, model.grammar, mean);
    for (size_t n = 0; n < parse.tree.nodes.size(); ++n) {
      const auto& node = parse.tree.nodes[n];
      if (node.preterminal) continue;
      if (unlex_subtree(parse.tree, static_cast<int>(n), model.spec.num_nonterminals) == pattern)
        matches.push_back({s, node.i, node.j, mean});
    }
  }
  if (matches.size() < 2)
    throw UsageError("fewer than 2 constituents match the pattern (" +
                     std::to_string(matches.size()) + " found)");

  std::vector<std::vector<double>> vectors;
  vectors.reserve(matches.size());
  for (const auto& m : matches) vectors.push_back(m.mean);
  PcaResult pca = top_principal_component(vectors);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.output_path.empty()) {
    file.open(args.output_path);
    if (!file) throw UsageError("cannot write report: " + args.output_path);
    out = &file;
  }
  *out << "pattern\t" << pattern << '\n';
  *out << "matches\t" << matches.size() << '\n';
  if (pca.degenerate) *out << "warning\tdegenerate variance; all projections are zero\n";

  std::vector<size_t> order(matches.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (pca.projections[a] != pca.projections[b]) return pca.projections[a] < pca.projections[b];
    return matches[a].sentence < matches[b].sentence;
  });

  auto emit = [&](const char* header, bool from_low) {
    *out << header << '\n';
    const int64_t count = std::min<int64_t>(args.top_m, static_cast<int64_t>(order.size()));
    for (int64_t r = 0; r < count; ++r) {
      const size_t idx = from_low ? order[static_cast<size_t>(r)]
                                  : order[order.size() - 1 - static_cast<size_t>(r)];
      const Match& m = matches[idx];
      *out << "  " << pca.projections[idx] << '\t' << m.sentence << '\t';
      for (int64_t t = m.i; t <= m.j; ++t) {
        if (t > m.i) *out << ' ';
        *out << corpus.tokens[m.sentence][static_cast<size_t>(t)];
      }
      *out << '\n';
    }
  };
  emit("PC-", true);
  emit("PC+", false);
  return 0;
}

}  // namespace cpcfg::cli
