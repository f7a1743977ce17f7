// molingo_lab: data synthesis, training, generation, evaluation and inspection.
//
// Exit codes: 0 ok, 1 other failure, 2 usage, 3 I/O or file format, 4 numerical.
// Failures print one line: error: category=<name> message=<text>

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "molingo/container.hpp"
#include "molingo/errors.hpp"
#include "molingo/evaluation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace molingo;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << v;
  return s.str();
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io::IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string file_hash(const fs::path& p) { return "crc32:" + hex32(io::crc32(read_bytes(p))); }

std::string text_hash(const std::string& s) {
  return "crc32:" + hex32(io::crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw io::IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw io::FormatError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw io::IoError("cannot write " + p.string());
  out << text;
  if (!out) throw io::IoError("write failed for " + p.string());
}

fs::path manifest_path(const fs::path& artifact) { return fs::path(artifact.string() + ".manifest.json"); }

class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv) : command_(std::move(command)) {
    j_["command"] = command_;
    j_["argv"] = std::move(argv);
    start_ = std::chrono::steady_clock::now();
  }
  void input(const std::string& role, const fs::path& p) {
    j_["inputs"][role] = {{"path", p.string()}, {"hash", file_hash(p)}};
  }
  void config(const json& c) {
    j_["config"] = c;
    j_["config_hash"] = text_hash(c.dump());
  }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void artifact(const fs::path& p) { artifacts_.push_back(p); }
  void write() {
    j_["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j_["threads"] = omp_get_max_threads();
    for (const auto& p : artifacts_) j_["artifacts"].push_back({{"path", p.string()}, {"hash", file_hash(p)}});
    for (const auto& p : artifacts_) write_text(manifest_path(p), j_.dump(2) + "\n");
  }

 private:
  std::string command_;
  json j_;
  std::vector<fs::path> artifacts_;
  std::chrono::steady_clock::time_point start_;
};

// Config file first, then any flag given on the command line.
template <class Config>
Config load_config(const std::string& path) {
  Config c;
  if (!path.empty()) read_json(path).get_to(c);
  return c;
}

template <class T>
void override_if(const CLI::Option* opt, T& field, const T& value) {
  if (opt->count() > 0) field = value;
}

text::PromptEncoder prompt_encoder(const std::string& embeddings) {
  if (embeddings.empty()) return {};
  return text::PromptEncoder(text::import_embeddings(embeddings));
}

std::ostream& log() { return std::cerr; }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t classes = 5, count = 500, min_length = 64, max_length = 160;
  double composite = 0.2, noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

void run_synth(const SynthArgs& a, Manifest& m) {
  motion::SynthSpec s;
  s.classes = a.classes;
  s.min_length = a.min_length;
  s.max_length = a.max_length;
  s.composite_fraction = a.composite;
  s.noise_m = a.noise;
  const auto corpus = motion::synth_corpus(s, a.count, a.seed);
  motion::write_corpus(a.out, corpus);
  m.config({{"classes", s.classes},
            {"count", a.count},
            {"min_length", s.min_length},
            {"max_length", s.max_length},
            {"composite_fraction", s.composite_fraction},
            {"noise_m", s.noise_m}});
  m.seed(a.seed);
  m.artifact(a.out);
  log() << "wrote " << corpus.size() << " sequences to " << a.out << "\n";
}

struct TrainAeArgs {
  std::string variant = "sae", config, corpus, out;
  std::uint64_t seed = 0;
  std::size_t steps = 0, batch = 0, log_every = 100;
  double lr = 0;
  CLI::Option *variant_opt = nullptr, *steps_opt = nullptr, *batch_opt = nullptr, *lr_opt = nullptr;
};

void write_history_csv(const fs::path& p, const std::string& header, const std::vector<std::string>& rows) {
  std::string text = header + "\n";
  for (const auto& r : rows) text += r + "\n";
  write_text(p, text);
}

int run_train_ae(const TrainAeArgs& a, Manifest& m) {
  auto c = load_config<ae::AutoencoderConfig>(a.config);
  if (a.variant_opt->count() > 0 || a.config.empty()) c.variant = ae::parse_variant(a.variant);
  override_if(a.steps_opt, c.steps, a.steps);
  override_if(a.batch_opt, c.batch, a.batch);
  override_if(a.lr_opt, c.lr, a.lr);
  c.validate();
  const auto corpus = motion::read_corpus(a.corpus);
  m.input("corpus", a.corpus);
  m.config(c);
  m.seed(a.seed);
  const auto r = ae::train_autoencoder(corpus, c, a.seed, [&](const ae::AeLogEntry& e) {
    if (a.log_every && e.step % a.log_every == 0)
      log() << "step " << e.step << " total " << e.total << " feat " << e.feat << " joint " << e.joint << " vel "
            << e.vel << " kl " << e.kl << " sem " << e.sem << " kept " << e.kept << "\n";
  });
  ckpt::write_checkpoint(a.out, r.model->to_checkpoint());
  std::vector<std::string> rows;
  for (const auto& e : r.history) {
    std::ostringstream s;
    s << e.step << ',' << e.total << ',' << e.feat << ',' << e.joint << ',' << e.vel << ',' << e.kl << ',' << e.sem
      << ',' << e.kept;
    rows.push_back(s.str());
  }
  const fs::path hist = a.out + ".history.csv";
  write_history_csv(hist, "step,total,feat,joint,vel,kl,sem,kept", rows);
  m.artifact(a.out);
  m.artifact(hist);
  if (r.diverged) {
    m.write();
    throw NumericalError(r.message + "; last finite weights written to " + a.out);
  }
  return 0;
}

struct TrainGenArgs {
  std::string ae, config, corpus, out, embeddings;
  std::uint64_t seed = 0;
  std::size_t steps = 0, batch = 0, log_every = 100;
  double lr = 0;
  CLI::Option *steps_opt = nullptr, *batch_opt = nullptr, *lr_opt = nullptr;
};

int run_train_gen(const TrainGenArgs& a, Manifest& m) {
  auto c = load_config<gen::GeneratorConfig>(a.config);
  override_if(a.steps_opt, c.steps, a.steps);
  override_if(a.batch_opt, c.batch, a.batch);
  override_if(a.lr_opt, c.lr, a.lr);
  const auto autoencoder = ae::Autoencoder::from_checkpoint(ckpt::read_checkpoint(a.ae, "autoencoder"));
  c.latent_dim = autoencoder->config().latent_dim;
  c.validate();
  const auto corpus = motion::read_corpus(a.corpus);
  const auto prompts = prompt_encoder(a.embeddings);
  m.input("corpus", a.corpus);
  m.input("ae", a.ae);
  if (!a.embeddings.empty()) m.input("embeddings", a.embeddings);
  m.config(c);
  m.seed(a.seed);
  const auto r = gen::train_generator(corpus, *autoencoder, c, a.seed, prompts, [&](const gen::GenLogEntry& e) {
    if (a.log_every && e.step % a.log_every == 0)
      log() << "step " << e.step << " loss " << e.loss << " lr " << e.lr << " grad " << e.grad_norm << "\n";
  });
  ckpt::write_checkpoint(a.out, r.model->to_checkpoint(&r.ema));
  std::vector<std::string> rows;
  for (const auto& e : r.history) {
    std::ostringstream s;
    s << e.step << ',' << e.loss << ',' << e.lr << ',' << e.grad_norm << ',' << e.masked << ',' << e.dropped;
    rows.push_back(s.str());
  }
  const fs::path hist = a.out + ".history.csv";
  write_history_csv(hist, "step,loss,lr,grad_norm,masked,dropped", rows);
  m.artifact(a.out);
  m.artifact(hist);
  if (r.diverged) {
    m.write();
    throw NumericalError(r.message + "; last finite weights written to " + a.out);
  }
  return 0;
}

struct TrainEvalArgs {
  std::string config, corpus, out;
  std::uint64_t seed = 0;
  std::size_t steps = 0, batch = 0, log_every = 100;
  CLI::Option *steps_opt = nullptr, *batch_opt = nullptr;
};

int run_train_eval(const TrainEvalArgs& a, Manifest& m) {
  auto c = load_config<eval::EvaluatorConfig>(a.config);
  override_if(a.steps_opt, c.steps, a.steps);
  override_if(a.batch_opt, c.batch, a.batch);
  c.validate();
  const auto corpus = motion::read_corpus(a.corpus);
  m.input("corpus", a.corpus);
  m.config(c);
  m.seed(a.seed);
  const auto r = eval::train_evaluator(corpus, c, a.seed, [&](const eval::EvalLogEntry& e) {
    if (a.log_every && e.step % a.log_every == 0)
      log() << "step " << e.step << " loss " << e.loss << " temperature " << e.temperature << "\n";
  });
  ckpt::write_checkpoint(a.out, r.model->to_checkpoint());
  std::vector<std::string> rows;
  for (const auto& e : r.history) {
    std::ostringstream s;
    s << e.step << ',' << e.loss << ',' << e.temperature;
    rows.push_back(s.str());
  }
  const fs::path hist = a.out + ".history.csv";
  write_history_csv(hist, "step,loss,temperature", rows);
  m.artifact(a.out);
  m.artifact(hist);
  return 0;
}

struct GenerateArgs {
  std::string prompt, ae, gen, out, joints_csv, plot_svg, embeddings;
  std::size_t length = 120;
  sample::SampleConfig sampling;
  bool raw_weights = false;
};

void write_joints_csv(const fs::path& p, const motion::JointTrajectory& t) {
  std::ostringstream s;
  s << "frame,joint,x,y,z\n";
  for (std::size_t f = 0; f < t.length(); ++f)
    for (std::size_t j = 0; j < t.joints(); ++j) {
      const double* q = t.positions.ptr() + (f * t.joints() + j) * 3;
      s << f << ',' << j << ',' << q[0] << ',' << q[1] << ',' << q[2] << '\n';
    }
  write_text(p, s.str());
}

// Left panel: root path seen from above. Right panel: joint heights over time.
void write_plot_svg(const fs::path& p, const motion::JointTrajectory& t, const std::string& title) {
  const double w = 360, h = 300, pad = 30;
  const std::size_t n = t.length(), jn = t.joints();
  auto at = [&](std::size_t f, std::size_t j, std::size_t c) { return t.positions[(f * jn + j) * 3 + c]; };
  double x0 = at(0, 0, 0), x1 = x0, z0 = at(0, 0, 2), z1 = z0, y0 = at(0, 0, 1), y1 = y0;
  for (std::size_t f = 0; f < n; ++f) {
    x0 = std::min(x0, at(f, 0, 0));
    x1 = std::max(x1, at(f, 0, 0));
    z0 = std::min(z0, at(f, 0, 2));
    z1 = std::max(z1, at(f, 0, 2));
    for (std::size_t j = 0; j < jn; ++j) {
      y0 = std::min(y0, at(f, j, 1));
      y1 = std::max(y1, at(f, j, 1));
    }
  }
  const double span = std::max({x1 - x0, z1 - z0, 0.1});
  const double cx = (x0 + x1) / 2, cz = (z0 + z1) / 2, ys = std::max(y1 - y0, 0.1);
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * w << "\" height=\"" << h + 20 << "\">\n";
  s << "<text x=\"10\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\">";
  for (char ch : title) {
    if (ch == '<') s << "&lt;";
    else if (ch == '&') s << "&amp;";
    else s << ch;
  }
  s << "</text>\n";
  s << "<g transform=\"translate(0,20)\">\n<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
    << "\" fill=\"none\" stroke=\"#999\"/>\n<polyline fill=\"none\" stroke=\"#1f77b4\" points=\"";
  for (std::size_t f = 0; f < n; ++f) {
    const double px = w / 2 + (at(f, 0, 0) - cx) / span * (w - 2 * pad);
    const double py = h / 2 - (at(f, 0, 2) - cz) / span * (h - 2 * pad);
    s << px << ',' << py << ' ';
  }
  s << "\"/>\n</g>\n<g transform=\"translate(" << w << ",20)\">\n<rect x=\"0\" y=\"0\" width=\"" << w
    << "\" height=\"" << h << "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (std::size_t j = 0; j < jn; ++j) {
    s << "<polyline fill=\"none\" stroke=\"" << colors[j % 6] << "\" points=\"";
    for (std::size_t f = 0; f < n; ++f) {
      const double px = pad + (n > 1 ? static_cast<double>(f) / static_cast<double>(n - 1) : 0.0) * (w - 2 * pad);
      const double py = h - pad - (at(f, j, 1) - y0) / ys * (h - 2 * pad);
      s << px << ',' << py << ' ';
    }
    s << "\"/>\n";
  }
  s << "</g>\n</svg>\n";
  write_text(p, s.str());
}

int run_generate(const GenerateArgs& a, Manifest& m) {
  a.sampling.validate();
  const auto autoencoder = ae::Autoencoder::from_checkpoint(ckpt::read_checkpoint(a.ae, "autoencoder"));
  const auto generator = gen::Generator::from_checkpoint(ckpt::read_checkpoint(a.gen, "generator"), !a.raw_weights);
  const auto prompts = prompt_encoder(a.embeddings);
  m.input("ae", a.ae);
  m.input("gen", a.gen);
  if (!a.embeddings.empty()) m.input("embeddings", a.embeddings);
  m.config({{"prompt", a.prompt},
            {"length", a.length},
            {"inference_steps", a.sampling.inference_steps},
            {"denoise_steps", a.sampling.denoise_steps},
            {"cfg_scale", a.sampling.cfg_scale},
            {"churn", a.sampling.churn},
            {"ema", !a.raw_weights}});
  m.seed(a.sampling.seed);
  const auto motion = sample::generate(a.prompt, a.length, *autoencoder, *generator, a.sampling, prompts);
  motion::write_corpus(a.out, {motion});
  m.artifact(a.out);
  if (!a.joints_csv.empty() || !a.plot_svg.empty()) {
    const auto traj = motion::to_joint_positions(motion);
    if (!a.joints_csv.empty()) {
      write_joints_csv(a.joints_csv, traj);
      m.artifact(a.joints_csv);
    }
    if (!a.plot_svg.empty()) {
      write_plot_svg(a.plot_svg, traj, a.prompt);
      m.artifact(a.plot_svg);
    }
  }
  log() << "generated " << motion.length() << " frames for \"" << a.prompt << "\"\n";
  return 0;
}

struct EvaluateArgs {
  std::string gen, ae, evaluator, corpus, report, embeddings;
  eval::EvalRunConfig run;
};

int run_evaluate(const EvaluateArgs& a, Manifest& m) {
  if (a.run.runs < 1) throw UsageError("--runs must be at least 1");
  a.run.sampling.validate();
  const auto autoencoder = ae::Autoencoder::from_checkpoint(ckpt::read_checkpoint(a.ae, "autoencoder"));
  const auto generator = gen::Generator::from_checkpoint(ckpt::read_checkpoint(a.gen, "generator"));
  const auto evaluator = eval::Evaluator::from_checkpoint(ckpt::read_checkpoint(a.evaluator, "evaluator"));
  const auto corpus = motion::read_corpus(a.corpus);
  const auto prompts = prompt_encoder(a.embeddings);
  m.input("gen", a.gen);
  m.input("ae", a.ae);
  m.input("evaluator", a.evaluator);
  m.input("corpus", a.corpus);
  if (!a.embeddings.empty()) m.input("embeddings", a.embeddings);
  m.config({{"runs", a.run.runs},
            {"samples", a.run.samples},
            {"pool", a.run.pool},
            {"mm_prompts", a.run.mm_prompts},
            {"mm_repeats", a.run.mm_repeats},
            {"cfg_scale", a.run.sampling.cfg_scale},
            {"churn", a.run.sampling.churn},
            {"inference_steps", a.run.sampling.inference_steps},
            {"denoise_steps", a.run.sampling.denoise_steps}});
  m.seed(a.run.seed);
  const auto report = eval::evaluate_run(*generator, *autoencoder, *evaluator, corpus, a.run, prompts,
                                         [&](std::size_t r) { log() << "run " << r + 1 << "/" << a.run.runs << "\n"; });
  const std::string text = report.to_json().dump(2) + "\n";
  if (a.report.empty()) {
    std::cout << text;
  } else {
    write_text(a.report, text);
    m.artifact(a.report);
  }
  return 0;
}

struct ExportArgs {
  std::string prompts, out;
};

int run_export(const ExportArgs& a, Manifest& m) {
  std::ifstream in(a.prompts);
  if (!in) throw io::IoError("cannot open " + a.prompts);
  text::EmbeddingMap map;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    map.emplace(line, text::toy_encode(line));
  }
  text::export_embeddings(a.out, map);
  m.input("prompts", a.prompts);
  m.artifact(a.out);
  log() << "exported " << map.size() << " prompts\n";
  return 0;
}

int run_inspect(const std::string& path) {
  const auto bytes = read_bytes(path);
  const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(8, bytes.size()));
  json out;
  out["path"] = path;
  if (magic == std::string(ckpt::kMagic, 8)) {
    const auto c = ckpt::read_checkpoint(path);
    out["kind"] = c.kind;
    out["config"] = c.config;
    std::size_t scalars = 0;
    for (const auto& [name, t] : c.tensors) {
      out["tensors"][name] = t.shape();
      scalars += t.numel();
    }
    out["scalars"] = scalars;
  } else if (magic == std::string(motion::kCorpusMagic, 8)) {
    const auto corpus = motion::read_corpus(path);
    out["kind"] = "corpus";
    out["sequences"] = corpus.size();
    std::size_t frames = 0, labeled = 0;
    for (const auto& m : corpus) {
      frames += m.length();
      labeled += m.labels.empty() ? 0 : 1;
    }
    out["frames"] = frames;
    out["labeled"] = labeled;
    if (!corpus.empty()) {
      out["dim"] = corpus.front().spec.dim();
      out["joints"] = corpus.front().spec.joints;
      out["fps"] = corpus.front().spec.fps;
      out["first_prompts"] = corpus.front().prompts;
    }
  } else if (magic == std::string(text::kEmbeddingMagic, 8)) {
    const auto map = text::import_embeddings(path);
    out["kind"] = "embeddings";
    out["prompts"] = map.size();
    if (!map.empty()) out["width"] = map.begin()->second.tokens.cols();
  } else {
    throw io::FormatError(path + ": unrecognized file magic");
  }
  const fs::path mp = manifest_path(path);
  if (fs::exists(mp)) out["manifest"] = read_json(mp);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int fail(const std::string& category, const std::string& message, int code) {
  std::string flat = message;
  for (auto& ch : flat)
    if (ch == '\n') ch = ' ';
  std::cerr << "error: category=" << category << " message=" << flat << "\n";
  return code;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("MOLINGO_LAB_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("MOLINGO_LAB_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"molingo_lab: text-to-motion toy pipeline"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads (default MOLINGO_LAB_THREADS or 1)")
                          ->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Write a synthetic labeled corpus");
  s->add_option("--classes", synth.classes, "Number of archetypes (4 or 5)")->check(CLI::Range(4, 5));
  s->add_option("--count", synth.count, "Number of sequences")->check(CLI::PositiveNumber);
  s->add_option("--min-length", synth.min_length, "Shortest sequence in frames");
  s->add_option("--max-length", synth.max_length, "Longest sequence in frames");
  s->add_option("--composite", synth.composite, "Share of two-segment sequences")->check(CLI::Range(0.0, 1.0));
  s->add_option("--noise", synth.noise, "Per-joint positional noise in meters")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.seed, "Seed");
  s->add_option("--out", synth.out, "Output corpus")->required();

  TrainAeArgs tae;
  auto* ta = app.add_subcommand("train-ae", "Train a motion autoencoder");
  tae.variant_opt = ta->add_option("--variant", tae.variant, "ae, vae or sae")
                        ->check(CLI::IsMember({"ae", "vae", "sae"}));
  ta->add_option("--config", tae.config, "JSON config (flags win)")->check(CLI::ExistingFile);
  ta->add_option("--corpus", tae.corpus, "Training corpus")->required();
  ta->add_option("--out", tae.out, "Output checkpoint")->required();
  ta->add_option("--seed", tae.seed, "Seed");
  tae.steps_opt = ta->add_option("--steps", tae.steps, "Training steps");
  tae.batch_opt = ta->add_option("--batch", tae.batch, "Batch size");
  tae.lr_opt = ta->add_option("--lr", tae.lr, "Learning rate");
  ta->add_option("--log-every", tae.log_every, "Progress interval in steps (0 = quiet)");

  TrainGenArgs tg;
  auto* tgc = app.add_subcommand("train-gen", "Train the masked flow generator");
  tgc->add_option("--ae", tg.ae, "Autoencoder checkpoint")->required();
  tgc->add_option("--corpus", tg.corpus, "Training corpus")->required();
  tgc->add_option("--config", tg.config, "JSON config (flags win)")->check(CLI::ExistingFile);
  tgc->add_option("--out", tg.out, "Output checkpoint")->required();
  tgc->add_option("--embeddings", tg.embeddings, "Imported prompt embeddings");
  tgc->add_option("--seed", tg.seed, "Seed");
  tg.steps_opt = tgc->add_option("--steps", tg.steps, "Training steps");
  tg.batch_opt = tgc->add_option("--batch", tg.batch, "Batch size");
  tg.lr_opt = tgc->add_option("--lr", tg.lr, "Peak learning rate");
  tgc->add_option("--log-every", tg.log_every, "Progress interval in steps (0 = quiet)");

  TrainEvalArgs te;
  auto* tec = app.add_subcommand("train-eval", "Train the contrastive evaluator");
  tec->add_option("--corpus", te.corpus, "Training corpus")->required();
  tec->add_option("--config", te.config, "JSON config (flags win)")->check(CLI::ExistingFile);
  tec->add_option("--out", te.out, "Output checkpoint")->required();
  tec->add_option("--seed", te.seed, "Seed");
  te.steps_opt = tec->add_option("--steps", te.steps, "Training steps");
  te.batch_opt = tec->add_option("--batch", te.batch, "Batch size");
  tec->add_option("--log-every", te.log_every, "Progress interval in steps (0 = quiet)");

  GenerateArgs ga;
  auto* g = app.add_subcommand("generate", "Generate one motion from a prompt");
  g->add_option("--prompt", ga.prompt, "Text prompt (empty = unconditional)")->required();
  g->add_option("--length", ga.length, "Frames")->check(CLI::PositiveNumber);
  g->add_option("--ae", ga.ae, "Autoencoder checkpoint")->required();
  g->add_option("--gen", ga.gen, "Generator checkpoint")->required();
  g->add_option("--out", ga.out, "Output corpus file")->required();
  g->add_option("--cfg", ga.sampling.cfg_scale, "Guidance scale");
  g->add_option("--churn", ga.sampling.churn, "Noise refresh strength in [0, 1)");
  g->add_option("--inference-steps", ga.sampling.inference_steps, "Unmasking steps");
  g->add_option("--denoise-steps", ga.sampling.denoise_steps, "Euler steps per position");
  g->add_option("--seed", ga.sampling.seed, "Seed");
  g->add_option("--embeddings", ga.embeddings, "Imported prompt embeddings");
  g->add_option("--export-joints", ga.joints_csv, "Joint positions CSV");
  g->add_option("--plot", ga.plot_svg, "Root path and joint height SVG");
  g->add_flag("--raw-weights", ga.raw_weights, "Use raw instead of EMA weights");

  EvaluateArgs ea;
  auto* e = app.add_subcommand("evaluate", "Run the metric suite");
  e->add_option("--gen", ea.gen, "Generator checkpoint")->required();
  e->add_option("--ae", ea.ae, "Autoencoder checkpoint")->required();
  e->add_option("--evaluator", ea.evaluator, "Evaluator checkpoint")->required();
  e->add_option("--corpus", ea.corpus, "Reference corpus")->required();
  e->add_option("--report", ea.report, "Report path (default stdout)");
  e->add_option("--runs", ea.run.runs, "Independent runs");
  e->add_option("--samples", ea.run.samples, "Corpus items per run (0 = all)");
  e->add_option("--pool", ea.run.pool, "Retrieval pool size");
  e->add_option("--mm-prompts", ea.run.mm_prompts, "MModality prompts");
  e->add_option("--mm-repeats", ea.run.mm_repeats, "MModality repeats per prompt (0 = skip)");
  e->add_option("--batch", ea.run.batch, "Generation batch");
  e->add_option("--cfg", ea.run.sampling.cfg_scale, "Guidance scale");
  e->add_option("--churn", ea.run.sampling.churn, "Noise refresh strength");
  e->add_option("--inference-steps", ea.run.sampling.inference_steps, "Unmasking steps");
  e->add_option("--denoise-steps", ea.run.sampling.denoise_steps, "Euler steps per position");
  e->add_option("--seed", ea.run.seed, "Master seed");
  e->add_option("--embeddings", ea.embeddings, "Imported prompt embeddings");

  ExportArgs xa;
  auto* x = app.add_subcommand("export-embeddings", "Write toy embeddings for a prompt list");
  x->add_option("--prompts", xa.prompts, "Text file, one prompt per line")->required();
  x->add_option("--out", xa.out, "Output embedding file")->required();

  std::string inspect_path;
  auto* in = app.add_subcommand("inspect", "Print a checkpoint, corpus or embedding summary");
  in->add_option("path", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    std::cerr << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return fail("usage", err.what(), 2);
  }

  try {
    if (threads_opt->count() == 0) threads = default_threads();
    omp_set_num_threads(static_cast<int>(threads));

    std::vector<std::string> args(argv, argv + argc);
    CLI::App* sub = app.get_subcommands().front();
    Manifest manifest(sub->get_name(), args);
    int code = 0;
    if (sub == s) {
      run_synth(synth, manifest);
    } else if (sub == ta) {
      code = run_train_ae(tae, manifest);
    } else if (sub == tgc) {
      code = run_train_gen(tg, manifest);
    } else if (sub == tec) {
      code = run_train_eval(te, manifest);
    } else if (sub == g) {
      code = run_generate(ga, manifest);
    } else if (sub == e) {
      code = run_evaluate(ea, manifest);
    } else if (sub == x) {
      code = run_export(xa, manifest);
    } else if (sub == in) {
      return run_inspect(inspect_path);
    }
    manifest.write();
    return code;
  } catch (const UsageError& err) {
    return fail("usage", err.what(), 2);
  } catch (const io::IoError& err) {
    return fail("io", err.what(), 3);
  } catch (const io::FormatError& err) {
    return fail("format", err.what(), 3);
  } catch (const NumericalError& err) {
    return fail("numerical", err.what(), 4);
  } catch (const ShapeError& err) {
    return fail("shape", err.what(), 1);
  } catch (const std::exception& err) {
    return fail("invalid", err.what(), 1);
  }
}
