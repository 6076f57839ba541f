// eedvit: generate corpora, train DINO ViTs, and measure layer-wise EED.
//
//   eedvit synth   --kind object --seed 7 --n 2048 --out data/object
//   eedvit train   --data data/object --out runs/object --steps 2000 --seed 1
//   eedvit profile --checkpoint runs/object/checkpoint.bin --data data/object --out prof/object
//   eedvit compare prof/object/profile.csv prof/texture/profile.csv --out cmp
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
// Every command stages its files next to the output directory and renames
// them into place only after all of them were written.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "eedvit/eedvit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace eedvit;

namespace {

// Raised for bad flag combinations and out-of-range values detected after
// parsing; mapped to exit code 2 like parse errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* seed_rule = "stream seed = mix64(seed ^ fnv1a(name)), then mix64(s ^ k) per coordinate k";

class StagedOutput {
public:
  explicit StagedOutput(const fs::path& dir) : dir_(dir) {
    const fs::path parent = dir_.has_parent_path() ? dir_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    staging_ = parent / ("." + dir_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }

  std::string file(const std::string& name) {
    names_.push_back(name);
    return (staging_ / name).string();
  }
  const std::vector<std::string>& names() const { return names_; }
  fs::path final_path(const std::string& name) const { return dir_ / name; }

  void commit() {
    fs::create_directories(dir_);
    for (const auto& n : names_) {
      fs::rename(staging_ / n, dir_ / n);
    }
  }

private:
  fs::path dir_;
  fs::path staging_;
  std::vector<std::string> names_;
};

class RunManifest {
public:
  explicit RunManifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = version;
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    doc_["started_at"] = buf;
    doc_["argv"] = json::array();
    doc_["config"] = json::object();
    doc_["seeds"] = json::object();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
  }

  void argv(int argc, char** argv) {
    for (int i = 0; i < argc; ++i) {
      doc_["argv"].push_back(argv[i]);
    }
  }
  void config(const KeyValues& kv) {
    for (const auto& [k, v] : kv.entries()) {
      doc_["config"][k] = v;
    }
  }
  void seed(const std::string& name, std::uint64_t value) {
    doc_["seeds"][name] = value;
    doc_["seeds"]["splitting_rule"] = seed_rule;
  }
  void input(const std::string& role, const std::string& path) { doc_["inputs"][role] = path; }

  // Writes run_manifest.json as the last staged file and publishes them all.
  void commit(StagedOutput& out) {
    const std::string path = out.file("run_manifest.json");
    for (const auto& n : out.names()) {
      doc_["outputs"].push_back(out.final_path(n).string());
    }
    doc_["duration_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_atomic(path, doc_.dump(2) + "\n");
    out.commit();
  }

private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

std::string metrics_header() { return "step,loss,teacher_entropy,lr\n"; }

std::string metrics_line(const MetricsRow& m) {
  return std::to_string(m.step) + "," + format_sig9(m.loss) + "," + format_sig9(m.teacher_entropy) + "," +
         format_sig9(m.lr) + "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t n = 2048;
  std::size_t size = 32;
  std::string out;
};

int cmd_synth(const SynthArgs& a, RunManifest& manifest) {
  const auto kind = parse_corpus_kind(a.kind);
  if (!kind) {
    throw UsageError("unknown corpus kind '" + a.kind + "' (expected texture or object)");
  }
  if (a.n == 0) {
    throw UsageError("--n must be positive");
  }
  if (a.size < 8) {
    throw UsageError("--size must be at least 8");
  }
  const ImageDataset ds = generate_corpus(*kind, a.seed, a.n, a.size);

  KeyValues extra;
  extra.set("kind", to_string(*kind));
  extra.set_number("seed", a.seed);
  StagedOutput out(a.out);
  const std::string staging_dir = fs::path(out.file("images.bin")).parent_path().string();
  out.file("manifest.txt");
  write_dataset_dir(staging_dir, ds, extra);

  manifest.config(extra);
  manifest.seed("seed", a.seed);
  manifest.commit(out);
  std::cout << "wrote " << ds.size() << " " << to_string(*kind) << " images (" << a.size << "px) to " << a.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string resume;
  std::size_t epochs = 1;
  std::optional<std::size_t> steps;
  std::uint64_t seed = 0;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> checkpoint_every;
  std::size_t log_every = 50;
};

int cmd_train(const TrainArgs& a, RunManifest& manifest) {
  TrainConfig cfg;
  std::optional<DinoState> resumed;
  if (!a.resume.empty()) {
    if (!a.config.empty()) {
      throw UsageError("--config and --resume are exclusive; a resumed run keeps its checkpoint config");
    }
    Checkpoint ck = read_checkpoint(a.resume);
    cfg = ck.config;
    cfg.max_steps = 0; // the stored value is the previous run's horizon
    resumed = std::move(ck.state);
    manifest.input("resume", a.resume);
  } else if (!a.config.empty()) {
    cfg = train_config_from(KeyValues::load(a.config));
    manifest.input("config", a.config);
  }
  if (a.threads) {
    cfg.threads = *a.threads;
  }
  if (a.checkpoint_every) {
    cfg.checkpoint_every = *a.checkpoint_every;
  }
  cfg.validate();

  const ImageDataset data = load_dataset(a.data);
  manifest.input("data", a.data);
  DinoState state = resumed ? std::move(*resumed) : init_dino_state(cfg, a.seed);
  const std::size_t start = state.step;

  // --steps is an absolute budget (a resumed run continues up to it);
  // --epochs counts epochs beyond the starting step.
  std::size_t total = start;
  if (a.steps) {
    total = std::max(start, *a.steps);
  } else if (cfg.max_steps > 0) {
    total = std::max(start, cfg.max_steps);
  } else {
    total = start + a.epochs * steps_per_epoch(data.size(), cfg.batch_size);
  }
  if (a.epochs == 0) {
    total = start;
  }
  cfg.max_steps = total;

  manifest.config(to_key_values(cfg));
  manifest.seed("seed", a.seed);

  StagedOutput out(a.out);
  std::string metrics = metrics_header();
  std::optional<DinoTrainer> trainer;
  if (total > start) {
    trainer.emplace(cfg, data, std::move(state), a.seed, total);
  }
  auto current = [&]() -> const DinoState& { return trainer ? trainer->state() : state; };

  int status = 0;
  std::string failure;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t s = start; s < total; ++s) {
    MetricsRow row;
    try {
      row = trainer->step();
    } catch (const NonFiniteLoss& e) {
      failure = e.what();
      status = 1;
      break;
    }
    metrics += metrics_line(row);
    const std::size_t done = row.step + 1;
    if (a.log_every > 0 && (done % a.log_every == 0 || done == total)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %zu/%zu loss %.4f teacher_entropy %.3f lr %.2e (%.0fs)\n", done, total, row.loss,
                   row.teacher_entropy, row.lr, secs);
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < total) {
      // Periodic snapshots survive an interrupted run, so they bypass staging.
      char name[32];
      std::snprintf(name, sizeof name, "step-%06zu.bin", done);
      fs::create_directories(fs::path(a.out) / "checkpoints");
      write_checkpoint((fs::path(a.out) / "checkpoints" / name).string(), cfg, current());
    }
  }

  write_checkpoint(out.file("checkpoint.bin"), cfg, current());
  write_text_atomic(out.file("metrics.csv"), metrics);
  write_text_atomic(out.file("config.txt"), to_key_values(cfg).to_text());
  if (status != 0) {
    write_text_atomic(out.file("failure.txt"), failure + "\ncheckpoint.bin holds the last finite state (step " +
                                                   std::to_string(current().step) + ")\n");
  }
  manifest.commit(out);

  if (status != 0) {
    std::cerr << "eedvit train: " << failure << "\n";
    return status;
  }
  std::cout << "trained steps " << start << ".." << total << "; checkpoint at " << out.final_path("checkpoint.bin").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ProfileArgs {
  std::string checkpoint;
  std::string data;
  std::string from_dump;
  std::string out;
  std::size_t probe_images = 256;
  std::uint64_t seed = 0;
  std::string variant = "centered";
  bool exclude_cls = false;
  std::string capture = "residual";
  std::string weights = "teacher";
  bool write_dump = false;
  std::size_t threads = 1;
};

bool is_perfect_square(std::size_t n) {
  std::size_t r = 0;
  while (r * r < n) {
    ++r;
  }
  return r * r == n;
}

int cmd_profile(const ProfileArgs& a, RunManifest& manifest) {
  if (a.from_dump.empty() && (a.checkpoint.empty() || a.data.empty())) {
    throw UsageError("profile needs --checkpoint and --data, or --from-dump");
  }
  if (!a.from_dump.empty() && a.write_dump) {
    throw UsageError("--write-dump cannot be combined with --from-dump");
  }
  if (a.probe_images == 0) {
    throw UsageError("--probe-images must be positive");
  }

  ProfileOptions opts;
  opts.probe_images = a.probe_images;
  opts.seed = a.seed;
  opts.centering = parse_centering(a.variant);
  opts.include_cls = !a.exclude_cls;
  opts.capture = a.capture == "normalized" ? CapturePoint::normalized : CapturePoint::residual;
  opts.threads = a.threads;

  // Inputs are read before anything is staged so a missing file leaves no trace.
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) {
    ck = read_checkpoint(a.checkpoint);
    manifest.input("checkpoint", a.checkpoint);
  }

  EEDProfile prof;
  std::optional<ActivationDump> dump;
  std::string title;
  if (!a.from_dump.empty()) {
    const ActivationDump in = read_dump(a.from_dump);
    manifest.input("dump", a.from_dump);
    const bool has_cls = ck ? ck->config.vit.include_cls_token : !is_perfect_square(in.tokens_per_image);
    prof = profile_from_dump(in, has_cls, opts);
    prof.dataset_tag = fs::path(a.from_dump).filename().string();
    title = "EED by layer (" + prof.dataset_tag + ")";
  } else {
    const ImageDataset data = load_dataset(a.data);
    manifest.input("data", a.data);
    const ViTConfig& vit = ck->config.vit;
    const ParameterSet<float>& params = a.weights == "student" ? ck->state.student : ck->state.teacher;
    auto layers = capture_probe(vit, params, data, opts);
    prof = profile_from_activations(layers, vit.include_cls_token, opts);
    prof.config_hash = vit_config_hash(vit);
    prof.dataset_tag = data.source;
    if (a.write_dump) {
      dump.emplace();
      dump->config_hash = prof.config_hash;
      dump->tokens_per_image = layers.front().tokens_per_image;
      dump->layers = std::move(layers);
    }
    title = "EED by layer (" + data.source + ", " + a.weights + ")";
  }

  KeyValues snapshot;
  if (ck) {
    snapshot = to_key_values(ck->config);
  }
  snapshot.set_number("profile.probe_images", opts.probe_images);
  snapshot.set("profile.covariance", to_string(opts.centering));
  snapshot.set("profile.include_cls", opts.include_cls ? "true" : "false");
  snapshot.set("profile.capture", a.capture);
  snapshot.set("profile.weights", a.from_dump.empty() ? a.weights : "dump");
  snapshot.set("profile.layer_convention", layer_convention);
  manifest.config(snapshot);
  manifest.seed("probe_seed", a.seed);

  StagedOutput out(a.out);
  write_text_atomic(out.file("profile.csv"), profile_csv(prof));
  write_text_atomic(out.file("profile.svg"), profile_svg(prof, title));
  write_text_atomic(out.file("summary.txt"), profile_summary(prof));
  if (dump) {
    write_dump(out.file("activations.eedv"), *dump);
  }
  manifest.commit(out);

  const auto b = bottleneck(prof);
  std::printf("layer  eed%%\n");
  for (std::size_t l = 0; l < prof.layers.size(); ++l) {
    std::printf("L%-4zu  %6.2f\n", l, prof.layers[l].eed_percent);
  }
  std::printf("bottleneck L%zu at %.2f%%, u-shape score %.2f\n", b.argmin_layer, b.min_eed_percent,
              b.u_shape_score);
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<std::string> profiles;
  std::string out;
};

std::string display_name(const std::string& path) {
  const fs::path p(path);
  if (p.stem() == "profile" && p.has_parent_path() && !p.parent_path().filename().empty()) {
    return p.parent_path().filename().string();
  }
  return p.stem().string();
}

int cmd_compare(const CompareArgs& a, RunManifest& manifest) {
  if (a.profiles.size() < 2) {
    throw UsageError("compare needs at least two profile CSVs");
  }
  std::vector<NamedProfile> named;
  for (std::size_t i = 0; i < a.profiles.size(); ++i) {
    const auto& path = a.profiles[i];
    named.push_back({display_name(path), read_profile_csv(path)});
    manifest.input("profile_" + std::to_string(i), path);
    const auto& first = named.front().profile;
    if (named.back().profile.layers.size() != first.layers.size()) {
      throw LayerCountMismatch(path + " has " + std::to_string(named.back().profile.layers.size()) +
                               " layers but " + a.profiles.front() + " has " + std::to_string(first.layers.size()));
    }
  }
  const ComparisonReport report = compare_profiles(named);
  const std::string table = comparison_table(report);
  std::cout << table;
  if (!a.out.empty()) {
    StagedOutput out(a.out);
    write_text_atomic(out.file("comparison.csv"), comparison_csv(report));
    write_text_atomic(out.file("comparison.txt"), table);
    manifest.commit(out);
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective encoding dimension of self-supervised vision transformers"};
  app.set_version_flag("--version", version);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic texture or object corpus");
  s->add_option("--kind", synth.kind, "texture or object")->required();
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--n", synth.n, "number of images")->capture_default_str();
  s->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  s->add_option("--out", synth.out, "dataset directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "self-distillation training of a ViT");
  t->add_option("--data", train.data, "dataset directory or CIFAR-100 binary")->required();
  t->add_option("--out", train.out, "run directory")->required();
  t->add_option("--config", train.config, "key = value config file");
  t->add_option("--resume", train.resume, "continue from this checkpoint");
  t->add_option("--epochs", train.epochs, "epochs beyond the starting step (0 writes the initial state)")
      ->capture_default_str();
  t->add_option("--steps", train.steps, "absolute step budget; overrides --epochs");
  t->add_option("--seed", train.seed, "init, shuffle and augmentation seed");
  t->add_option("--threads", train.threads, "worker threads (default 1)");
  t->add_option("--checkpoint-every", train.checkpoint_every, "also snapshot every N steps");
  t->add_option("--log-every", train.log_every, "progress line every N steps (0 silences)")->capture_default_str();

  ProfileArgs prof;
  auto* p = app.add_subcommand("profile", "layer-wise EED of a trained model");
  p->add_option("--checkpoint", prof.checkpoint, "checkpoint from train");
  p->add_option("--data", prof.data, "probe dataset");
  p->add_option("--from-dump", prof.from_dump, "profile a saved activation dump instead of a live model");
  p->add_option("--out", prof.out, "output directory")->required();
  p->add_option("--probe-images", prof.probe_images, "probe subset size")->capture_default_str();
  p->add_option("--seed", prof.seed, "probe subset seed");
  p->add_option("--variant", prof.variant, "covariance variant")
      ->check(CLI::IsMember({"centered", "uncentered"}))
      ->capture_default_str();
  p->add_flag("--exclude-cls", prof.exclude_cls, "drop the CLS token from the covariance");
  p->add_option("--capture", prof.capture, "block output or its layer-normalized form")
      ->check(CLI::IsMember({"residual", "normalized"}))
      ->capture_default_str();
  p->add_option("--weights", prof.weights, "which network to measure")
      ->check(CLI::IsMember({"teacher", "student"}))
      ->capture_default_str();
  p->add_flag("--write-dump", prof.write_dump, "also save the captured activations");
  p->add_option("--threads", prof.threads, "concurrent layer decompositions")->capture_default_str();

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "order profiles by their bottleneck depth");
  c->add_option("profiles", cmp.profiles, "profile CSVs")->required();
  c->add_option("--out", cmp.out, "also write comparison.csv and comparison.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  RunManifest manifest(command);
  manifest.argv(argc, argv);
  try {
    if (command == "synth") {
      return cmd_synth(synth, manifest);
    }
    if (command == "train") {
      return cmd_train(train, manifest);
    }
    if (command == "profile") {
      return cmd_profile(prof, manifest);
    }
    return cmd_compare(cmp, manifest);
  } catch (const UsageError& e) {
    std::cerr << "eedvit " << command << ": " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "eedvit " << command << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "eedvit " << command << ": " << e.what() << "\n";
    return 1;
  }
}
