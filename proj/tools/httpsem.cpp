// httpsem: extract, train, infer, eval, synth, keyscan, importance.
//
// Machine-readable output goes to --output (or stdout); summaries and
// warnings go to stderr. Exit status: 0 ok, 1 fatal error, 2 usage error.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include <httpsem/httpsem.hpp>

using namespace httpsem;
using nlohmann::json;

namespace {

struct Global {
  std::string mode = "standard";
  std::uint64_t seed = 1;
  std::size_t jobs = 0;
  std::string format;
};

std::size_t effective_jobs(std::size_t jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Opens the output file, or hands back stdout for "" and "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) throw Error("cannot write " + path);
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

std::vector<Connection> load_connections(const std::string& pcap) {
  PcapStats stats;
  auto conns = parse_connections(load_pcap(pcap, &stats));
  return conns;
}

std::vector<LabeledConnection> load_corpus(const std::string& index) {
  IngestReport rep;
  auto corpus = load_labeled_corpus(index, Registries{}, &rep);
  for (const auto& r : rep.rejected) warn("rejected " + r);
  if (rep.unmatched) warn(std::to_string(rep.unmatched) + " connection(s) without ground truth");
  std::cerr << index << ": " << corpus.size() << " labeled connection(s)\n";
  return corpus;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string pcap, output, packets;
};

int cmd_extract(const Global& g, const ExtractArgs& a) {
  const Mode mode = parse_mode(g.mode);
  const std::string fmt = g.format.empty() ? "csv" : g.format;
  if (fmt != "csv" && fmt != "jsonl") throw Error("extract supports --format csv or jsonl");
  auto raws = load_pcap(a.pcap);
  if (!a.packets.empty()) {
    Output p(a.packets);
    for (const auto& r : raws) write_packets_jsonl(p.stream(), r);
  }
  auto conns = parse_connections(std::move(raws));
  Output out(a.output);
  if (fmt == "csv") write_features_csv_header(out.stream(), mode);
  std::size_t rows = 0;
  for (const auto& c : conns) {
    if (fmt == "csv")
      write_features_csv(out.stream(), c, mode);
    else
      write_features_jsonl(out.stream(), c, mode);
    rows += c.records.size();
  }
  std::cerr << conns.size() << " TLS connection(s), " << rows << " record(s), " << sample_length(mode)
            << " features per record\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ForestArgs {
  std::size_t trees = 100;
  std::size_t max_depth = 0;
  std::size_t min_leaf = 1;
  std::size_t features_per_split = 0;
  double feature_fraction = 0.0;
  std::size_t folds = 2;
  bool truth_context = false;
  bool exclude_whole_record = false;
  std::size_t max_iters = 10;
};

void add_forest_options(CLI::App* sub, ForestArgs& f) {
  sub->add_option("--trees", f.trees, "Trees per forest")->capture_default_str();
  sub->add_option("--max-depth", f.max_depth, "Maximum tree depth, 0 = unlimited")->capture_default_str();
  sub->add_option("--min-leaf", f.min_leaf, "Minimum samples per leaf")->capture_default_str();
  sub->add_option("--features-per-split", f.features_per_split, "Candidate features per split, 0 = sqrt(d)")
      ->capture_default_str();
  sub->add_option("--feature-fraction", f.feature_fraction,
                  "Candidate features per split as a fraction of d; overrides --features-per-split")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--folds", f.folds, "Cross-fitting folds for enhanced-model context")->capture_default_str();
  sub->add_flag("--truth-context", f.truth_context, "Train enhanced models on ground-truth context");
  sub->add_flag("--exclude-whole-record", f.exclude_whole_record,
                "Leave the whole target record out of its enhanced features");
  sub->add_option("--max-iters", f.max_iters, "Iteration cap")->capture_default_str();
}

TrainConfig train_config(const Global& g, const ForestArgs& f) {
  TrainConfig c;
  c.mode = parse_mode(g.mode);
  c.seed = g.seed;
  c.jobs = effective_jobs(g.jobs);
  c.forest.n_trees = f.trees;
  c.forest.max_depth = f.max_depth;
  c.forest.min_leaf = f.min_leaf;
  c.forest.features_per_split = f.features_per_split;
  c.feature_fraction = f.feature_fraction;
  c.folds = f.folds;
  c.truth_context = f.truth_context;
  c.inference.exclude_whole_record = f.exclude_whole_record;
  c.inference.max_iters = f.max_iters;
  return c;
}

struct TrainArgs {
  std::string index, output;
  ForestArgs forest;
};

int cmd_train(const Global& g, const TrainArgs& a) {
  if (a.output.empty()) throw Error("train needs --output");
  auto corpus = load_corpus(a.index);
  auto cfg = train_config(g, a.forest);
  auto bundle = train_bundle(corpus, cfg);
  std::size_t trained = 0;
  for (const ProtocolModels* m : {&bundle.http1, &bundle.http2}) {
    for (const auto& n : m->notices) warn(std::string(to_string(m->registry.protocol())) + " " + n);
    for (std::size_t p = 0; p < m->registry.size(); ++p) {
      if (!m->first_pass[p]) continue;
      ++trained;
      std::cerr << to_string(m->registry.protocol()) << " " << m->registry[p].id << ": " << m->train_counts[p]
                << " training samples\n";
    }
  }
  if (trained == 0) {
    std::cerr << "error: no problem had enough labels to train\n";
    return 1;
  }
  save_bundle(bundle, a.output);
  std::cerr << "wrote " << a.output << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string pcap, bundle, output;
};

int cmd_infer(const Global& g, const InferArgs& a) {
  if (!g.format.empty() && g.format != "jsonl") throw Error("infer writes --format jsonl");
  auto bundle = load_bundle(a.bundle);
  if (bundle.mode != parse_mode(g.mode))
    warn(std::string("bundle was trained in ") + to_string(bundle.mode) + " mode; using it");
  auto conns = load_connections(a.pcap);
  std::vector<InferenceResult> results(conns.size());
  parallel_for(conns.size(), effective_jobs(g.jobs),
               [&](std::size_t i) { results[i] = iterative_classify(conns[i], bundle); });
  Output out(a.output);
  std::size_t converged = 0, fallback = 0;
  for (std::size_t i = 0; i < conns.size(); ++i) {
    write_predictions_jsonl(out.stream(), conns[i], results[i], bundle);
    converged += results[i].converged;
    fallback += results[i].alpn_fallback;
  }
  std::cerr << conns.size() << " connection(s); " << converged << " converged; " << fallback
            << " classified by the ALPN fallback\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string index, train_index, test_index, split = "week";
  double train_fraction = 0.5;
  bool filter_misdetected = false;
  std::string output, confusion_dir;
  ForestArgs forest;
  // Malware experiment.
  std::vector<std::string> benign, malicious;
  std::string bundle;
  std::size_t top_k = 10;
};

int eval_malware(const Global& g, const EvalArgs& a) {
  if (a.bundle.empty()) throw Error("malware evaluation needs --bundle");
  std::vector<Connection> benign, malicious;
  for (const auto& p : a.benign)
    for (auto& c : load_connections(p)) benign.push_back(std::move(c));
  for (const auto& p : a.malicious)
    for (auto& c : load_connections(p)) malicious.push_back(std::move(c));
  auto bundle = load_bundle(a.bundle);
  MalwareConfig cfg;
  cfg.seed = g.seed;
  cfg.train_fraction = a.train_fraction;
  cfg.top_k = a.top_k;
  cfg.jobs = effective_jobs(g.jobs);
  cfg.forest.n_trees = a.forest.trees;
  cfg.forest.max_depth = a.forest.max_depth;
  cfg.forest.min_leaf = a.forest.min_leaf;
  cfg.forest.features_per_split = a.forest.features_per_split;
  auto rep = run_malware_experiment(benign, malicious, bundle, cfg);
  Output out(a.output);
  out.stream() << to_json(rep).dump(2) << "\n";
  std::cerr << render_text(rep);
  return 0;
}

int cmd_eval(const Global& g, const EvalArgs& a) {
  const std::string fmt = g.format.empty() ? "json" : g.format;
  if (fmt != "json" && fmt != "csv") throw Error("eval supports --format json or csv");
  if (!a.benign.empty() || !a.malicious.empty()) return eval_malware(g, a);

  std::vector<LabeledConnection> train, test;
  if (!a.train_index.empty() || !a.test_index.empty()) {
    if (a.train_index.empty() || a.test_index.empty()) throw Error("--train-index and --test-index go together");
    train = load_corpus(a.train_index);
    test = load_corpus(a.test_index);
  } else {
    if (a.index.empty()) throw Error("eval needs --index, or --train-index with --test-index");
    SplitPolicy policy;
    if (a.split == "week")
      policy = SplitPolicy::by_week();
    else if (a.split == "fraction")
      policy = SplitPolicy::by_fraction(a.train_fraction, derive_seed(g.seed, "split"));
    else
      throw Error("unknown split: " + a.split);
    std::tie(train, test) = split_dataset(load_corpus(a.index), policy);
  }
  ExperimentConfig cfg;
  cfg.train = train_config(g, a.forest);
  cfg.filter_misdetected = a.filter_misdetected;
  auto rep = run_semantics_experiment(train, test, cfg);

  Output out(a.output);
  if (fmt == "json") {
    out.stream() << to_json(rep).dump(2) << "\n";
  } else {
    out.stream() << "protocol,problem,labels,train_samples,single_accuracy,single_f1,iterative_accuracy,iterative_f1\n";
    for (const auto& pr : rep.protocols)
      for (const auto& r : pr.problems) {
        out.stream() << to_string(pr.protocol) << "," << r.id << "," << r.labels << "," << r.train_samples;
        if (r.skipped) {
          out.stream() << ",n/a,n/a,n/a,n/a\n";
          continue;
        }
        out.stream() << "," << format_number(r.single_pass.accuracy) << "," << format_number(r.single_pass.f1) << ","
                     << format_number(r.iterative.accuracy) << "," << format_number(r.iterative.f1) << "\n";
      }
  }
  if (!a.confusion_dir.empty()) {
    std::filesystem::create_directories(a.confusion_dir);
    for (const auto& pr : rep.protocols)
      for (const auto& r : pr.problems) {
        if (r.skipped) continue;
        auto stem = std::string(pr.protocol == Protocol::http1 ? "http1_" : "h2_") + r.id;
        std::ofstream(std::filesystem::path(a.confusion_dir) / (stem + ".csv")) << to_csv(r.iterative.cm);
        std::ofstream(std::filesystem::path(a.confusion_dir) / (stem + ".plot.csv")) << to_plot_csv(r.iterative.cm);
      }
  }
  std::cerr << render_text(rep);
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string output_dir, spec_file, stem = "synth";
  std::size_t connections = 0;
  double http2_fraction = -1;
  bool malicious = false;
};

int cmd_synth(const Global& g, const SynthArgs& a) {
  if (a.output_dir.empty()) throw Error("synth needs --output-dir");
  SynthSpec spec;
  if (!a.spec_file.empty()) {
    std::ifstream in(a.spec_file);
    if (!in) throw Error("cannot open " + a.spec_file);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(a.spec_file + ": " + e.what());
    }
    spec = synth_spec_from_json(j);
  }
  spec.seed = g.seed;
  if (a.connections > 0) spec.n_connections = a.connections;
  if (a.http2_fraction >= 0) spec.http2_fraction = a.http2_fraction;
  if (a.malicious) spec = malicious_variant(spec);
  auto corpus = SynthGenerator(spec).generate();
  auto index = write_synth_dataset(corpus, spec, a.output_dir, a.stem);
  std::cerr << "wrote " << corpus.size() << " connection(s); index " << index << "\n";
  std::cout << index << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct KeyscanArgs {
  std::string dump, output, client_random;
  std::vector<std::string> profiles;
  std::size_t window = kScanWindow, overlap = kScanOverlap;
};

int cmd_keyscan(const Global& g, const KeyscanArgs& a) {
  const std::string fmt = g.format.empty() ? "text" : g.format;
  if (fmt != "text" && fmt != "json" && fmt != "jsonl") throw Error("keyscan supports --format json or jsonl");
  ProfileSet profiles;
  for (const auto& p : a.profiles) profiles.push_back(parse_key_profile(p));
  if (profiles.empty()) profiles.assign(kAllProfiles.begin(), kAllProfiles.end());
  auto hits = scan_file(a.dump, profiles, a.window, a.overlap);
  std::optional<Bytes> cr;
  if (!a.client_random.empty()) {
    cr = from_hex(a.client_random);
    if (cr->size() != 32) throw Error("client random must be 32 bytes");
  }
  Output out(a.output);
  if (fmt == "text") {
    out.stream() << emit_keys(hits, cr);
  } else {
    json arr = json::array();
    for (const auto& h : hits) {
      json j = {{"schema_version", kDumpSchemaVersion},
                {"profile", to_string(h.profile)},
                {"offset", h.offset},
                {"material", to_hex(h.material)}};
      if (fmt == "jsonl")
        out.stream() << j.dump() << "\n";
      else
        arr.push_back(j);
    }
    if (fmt == "json") out.stream() << arr.dump(2) << "\n";
  }
  const auto size = std::filesystem::file_size(a.dump);
  std::cerr << hits.size() << " candidate(s) in " << size << " bytes; " << format_number(expected_false_positives(profiles, size))
            << " expected by chance\n";
  (void)g;
  return 0;
}

// ---------------------------------------------------------------------------

struct ImportanceArgs {
  std::string bundle, problem, protocol = "http/1.1", stage = "first", output;
  std::size_t top = 10;
};

int cmd_importance(const Global& g, const ImportanceArgs& a) {
  const std::string fmt = g.format.empty() ? "csv" : g.format;
  if (fmt != "csv" && fmt != "json") throw Error("importance supports --format csv or json");
  auto bundle = load_bundle(a.bundle);
  const Forest* forest = nullptr;
  std::vector<std::string> names;
  if (a.problem == "alp") {
    if (!bundle.alp) throw Error("bundle has no ALPN fallback model");
    forest = &*bundle.alp;
    for (std::size_t i = 0; i < kAlpLengths; ++i) names.push_back("record_length[" + std::to_string(i) + "]");
  } else {
    Protocol proto;
    if (a.protocol == "http/1.1" || a.protocol == "http1")
      proto = Protocol::http1;
    else if (a.protocol == "h2" || a.protocol == "http2")
      proto = Protocol::http2;
    else
      throw Error("unknown protocol: " + a.protocol);
    const auto& m = bundle.of(proto);
    if (a.problem == "message-type") {
      if (!m.message_type) throw Error("no message-type model");
      forest = &*m.message_type;
      names = record_schema(bundle.mode).names;
    } else {
      auto pi = m.registry.find(a.problem);
      if (!pi) throw Error("unknown problem: " + a.problem);
      if (a.stage == "first") {
        if (!m.first_pass[*pi]) throw Error(a.problem + " was not trained");
        forest = &*m.first_pass[*pi];
        names = record_schema(bundle.mode).names;
      } else if (a.stage == "enhanced") {
        if (!m.enhanced[*pi]) throw Error(a.problem + " was not trained");
        forest = &*m.enhanced[*pi];
        names = enhanced_schema(bundle.mode, m.registry).names;
      } else {
        throw Error("unknown stage: " + a.stage);
      }
    }
  }
  auto ranked = top_features(*forest, names, a.top);
  Output out(a.output);
  if (fmt == "csv") {
    out.stream() << "rank,feature,importance\n";
    for (std::size_t i = 0; i < ranked.size(); ++i)
      out.stream() << i + 1 << "," << detail::csv_field(ranked[i].name) << "," << format_number(ranked[i].weight) << "\n";
  } else {
    json arr = json::array();
    for (const auto& r : ranked) arr.push_back({{"feature", r.name}, {"importance", r.weight}});
    out.stream() << json{{"schema_version", kDumpSchemaVersion}, {"features", arr}}.dump(2) << "\n";
  }
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::cerr << i + 1 << ". " << ranked[i].name << " " << format_number(ranked[i].weight) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HTTP semantics inference over encrypted TLS traffic"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML or INI file mirroring the command-line flags");
  Global g;
  app.add_option("--mode", g.mode, "Feature mode")->check(CLI::IsMember({"standard", "tor"}))->capture_default_str();
  app.add_option("--seed", g.seed, "Root seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads, 0 = all cores")->capture_default_str();
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "jsonl", "json"}));

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Per-record feature vectors from a pcap");
  extract->add_option("pcap", ex.pcap, "Capture file")->required()->check(CLI::ExistingFile);
  extract->add_option("-o,--output", ex.output, "Output file, default stdout");
  extract->add_option("--packets", ex.packets, "Also write per-connection packet metadata as JSON Lines");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model bundle from a labeled corpus");
  train->add_option("--index", tr.index, "Corpus index JSON")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output", tr.output, "Bundle path (.json or .msgpack)")->required();
  add_forest_options(train, tr.forest);

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Iterative semantics inference on a pcap");
  infer->add_option("pcap", in.pcap, "Capture file")->required()->check(CLI::ExistingFile);
  infer->add_option("--bundle", in.bundle, "Model bundle")->required()->check(CLI::ExistingFile);
  infer->add_option("-o,--output", in.output, "Predictions JSON Lines, default stdout");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Single-pass vs iterative evaluation, or the malware experiment");
  eval->add_option("--index", ev.index, "Corpus index to split")->check(CLI::ExistingFile);
  eval->add_option("--train-index", ev.train_index, "Training corpus index")->check(CLI::ExistingFile);
  eval->add_option("--test-index", ev.test_index, "Test corpus index")->check(CLI::ExistingFile);
  eval->add_option("--split", ev.split, "week or fraction")->check(CLI::IsMember({"week", "fraction"}))
      ->capture_default_str();
  eval->add_option("--train-fraction", ev.train_fraction, "Training share for fraction splits")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  eval->add_flag("--filter-misdetected", ev.filter_misdetected,
                 "Drop test connections with any message-type error");
  eval->add_option("-o,--output", ev.output, "Report path, default stdout");
  eval->add_option("--confusion-dir", ev.confusion_dir, "Write per-problem confusion matrices here");
  eval->add_option("--benign", ev.benign, "Benign captures (malware experiment)")->check(CLI::ExistingFile);
  eval->add_option("--malicious", ev.malicious, "Malicious captures (malware experiment)")->check(CLI::ExistingFile);
  eval->add_option("--bundle", ev.bundle, "Bundle used to enrich malware features")->check(CLI::ExistingFile);
  eval->add_option("--top", ev.top_k, "Top features to report")->capture_default_str();
  add_forest_options(eval, ev.forest);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic labeled corpus");
  synth->add_option("--output-dir", sy.output_dir, "Directory for pcap, ground truth and index")->required();
  synth->add_option("--spec", sy.spec_file, "Generator settings JSON")->check(CLI::ExistingFile);
  synth->add_option("--stem", sy.stem, "File name stem")->capture_default_str();
  synth->add_option("--connections", sy.connections, "Number of connections");
  synth->add_option("--http2-fraction", sy.http2_fraction, "Share of HTTP/2 connections")->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--malicious", sy.malicious, "Shift HTTP-semantics priors to the malicious profile");

  KeyscanArgs ks;
  auto* keyscan = app.add_subcommand("keyscan", "Scan a memory dump for TLS master secrets and Tor keys");
  keyscan->add_option("dump", ks.dump, "Memory dump")->required()->check(CLI::ExistingFile);
  keyscan->add_option("-o,--output", ks.output, "Key file, default stdout");
  keyscan->add_option("--profiles", ks.profiles, "Profiles to scan for, default all")->delimiter(',');
  keyscan->add_option("--window", ks.window, "Bytes per scan window")->capture_default_str();
  keyscan->add_option("--overlap", ks.overlap, "Bytes shared by consecutive windows")->capture_default_str();
  keyscan->add_option("--client-random", ks.client_random, "Hex client random; emits CLIENT_RANDOM key-log lines");

  ImportanceArgs im;
  auto* importance = app.add_subcommand("importance", "Gini feature importance of one bundle model");
  importance->add_option("--bundle", im.bundle, "Model bundle")->required()->check(CLI::ExistingFile);
  importance->add_option("--problem", im.problem, "Problem id, message-type, or alp")->required();
  importance->add_option("--protocol", im.protocol, "http/1.1 or h2")->capture_default_str();
  importance->add_option("--stage", im.stage, "first or enhanced")->capture_default_str();
  importance->add_option("--top", im.top, "Features to list")->capture_default_str();
  importance->add_option("-o,--output", im.output, "Output file, default stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) return cmd_extract(g, ex);
    if (*train) return cmd_train(g, tr);
    if (*infer) return cmd_infer(g, in);
    if (*eval) return cmd_eval(g, ev);
    if (*synth) return cmd_synth(g, sy);
    if (*keyscan) return cmd_keyscan(g, ks);
    if (*importance) return cmd_importance(g, im);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
