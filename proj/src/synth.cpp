#include "molingo/motion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "molingo/kinematics.hpp"
#include "molingo/rng.hpp"

namespace molingo::motion {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kStandHeight = 1.0;
constexpr double kShoulderY = 0.45;
constexpr double kShoulderX = 0.2;
constexpr double kArmLength = 0.6;
constexpr double kFootX = 0.15;
constexpr double kFootY = 0.05;  // ankle height above ground
constexpr std::size_t kBlendFrames = 8;

enum Archetype : std::size_t { WalkStraight = 0, WalkCircle = 1, RaiseArm = 2, Squat = 3, Wave = 4 };

// One toy frame in the representation's own units (body frame).
struct BodyFrame {
  double yaw_rate = 0, vx = 0, vz = 0, height = kStandHeight;
  std::array<double, 12> locals{};  // left hand, right hand, left foot, right foot
};

struct Jitter {
  double speed = 1, amplitude = 1, freq = 1, phase = 0;
};

void set_local(BodyFrame& f, std::size_t joint, double x, double y, double z) {
  f.locals[3 * joint + 0] = x;
  f.locals[3 * joint + 1] = y;
  f.locals[3 * joint + 2] = z;
}

void arm(BodyFrame& f, std::size_t joint, double side, double angle, double forward) {
  set_local(f, joint, side * (kShoulderX + kArmLength * std::sin(angle)), kShoulderY - kArmLength * std::cos(angle),
            forward);
}

void stand(BodyFrame& f) {
  f.height = kStandHeight;
  arm(f, 0, 1.0, 0.0, 0.0);
  arm(f, 1, -1.0, 0.0, 0.0);
  set_local(f, 2, kFootX, kFootY - f.height, 0.0);
  set_local(f, 3, -kFootX, kFootY - f.height, 0.0);
}

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Gait with hand swing equal and opposite to foot swing, so the across-body
// vector keeps zero forward component.
void gait(BodyFrame& f, double phase, double amplitude) {
  const double s = std::sin(phase);
  f.height = kStandHeight - 0.03 + 0.02 * std::cos(2.0 * phase);
  arm(f, 0, 1.0, 0.0, -amplitude * s);
  arm(f, 1, -1.0, 0.0, amplitude * s);
  set_local(f, 2, kFootX, kFootY + 0.04 * std::max(0.0, s) - f.height, amplitude * s);
  set_local(f, 3, -kFootX, kFootY + 0.04 * std::max(0.0, -s) - f.height, -amplitude * s);
}

std::vector<BodyFrame> segment(std::size_t archetype, std::size_t variant, std::size_t length, double fps,
                               const Jitter& j) {
  std::vector<BodyFrame> out(length);
  const std::size_t a = variant % 2, b = variant / 2;
  for (std::size_t n = 0; n < length; ++n) {
    BodyFrame& f = out[n];
    stand(f);
    const double t = static_cast<double>(n) / fps;
    const double u = length > 1 ? static_cast<double>(n) / static_cast<double>(length - 1) : 0.0;
    switch (archetype) {
      case WalkStraight: {
        const double speed = (b == 0 ? 0.7 : 1.5) * j.speed;
        const double dir = a == 0 ? 1.0 : -1.0;
        const double freq = (0.8 + 0.5 * speed) * j.freq;
        gait(f, 2.0 * kPi * freq * t + j.phase, (0.12 + 0.1 * speed) * j.amplitude);
        f.vz = dir * speed;
        break;
      }
      case WalkCircle: {
        const double speed = 1.0 * j.speed;
        const double radius = (b == 0 ? 1.2 : 2.5) * j.amplitude;
        const double turn = a == 0 ? 1.0 : -1.0;
        gait(f, 2.0 * kPi * (1.3 * j.freq) * t + j.phase, 0.2 * j.amplitude);
        f.vz = speed;
        f.yaw_rate = turn * speed / radius;
        break;
      }
      case RaiseArm: {
        const double side = a == 0 ? 1.0 : -1.0;
        const double top = (b == 0 ? 0.5 * kPi : 0.95 * kPi) * std::min(1.0, j.amplitude);
        const double p = smoothstep(u / 0.3) * (1.0 - smoothstep((u - 0.7) / 0.3));
        arm(f, a == 0 ? 0 : 1, side, top * p, 0.0);
        break;
      }
      case Squat: {
        const double depth = (b == 0 ? 0.25 : 0.5) * j.amplitude;
        const double period = (a == 0 ? 3.0 : 1.5) / j.freq;
        const double s = 0.5 * (1.0 - std::cos(2.0 * kPi * t / period + j.phase * 0.0));
        f.height = kStandHeight - depth * s;
        arm(f, 0, 1.0, 0.5 * s, 0.35 * s);
        arm(f, 1, -1.0, 0.5 * s, 0.35 * s);
        set_local(f, 2, kFootX, kFootY - f.height, 0.0);
        set_local(f, 3, -kFootX, kFootY - f.height, 0.0);
        break;
      }
      case Wave: {
        const double side = b == 0 ? 1.0 : -1.0;
        const double freq = (a == 0 ? 1.0 : 2.5) * j.freq;
        const double ramp = smoothstep(u / 0.15);
        const double angle = ramp * (0.8 * kPi + 0.12 * kPi * j.amplitude * std::sin(2.0 * kPi * freq * t + j.phase));
        arm(f, b == 0 ? 0 : 1, side, angle, 0.0);
        break;
      }
      default:
        throw std::out_of_range("unknown archetype");
    }
  }
  return out;
}

Tensor body_to_frames(const std::vector<BodyFrame>& body) {
  const std::size_t d = kinematics::feature_dim(5);
  Tensor frames({body.size(), d});
  for (std::size_t n = 0; n < body.size(); ++n) {
    double* f = frames.ptr() + n * d;
    f[0] = body[n].yaw_rate;
    f[1] = body[n].vx;
    f[2] = body[n].vz;
    f[3] = body[n].height;
    std::copy(body[n].locals.begin(), body[n].locals.end(), f + 4);
  }
  return frames;
}

BodyFrame lerp(const BodyFrame& x, const BodyFrame& y, double w) {
  BodyFrame o;
  o.yaw_rate = x.yaw_rate + w * (y.yaw_rate - x.yaw_rate);
  o.vx = x.vx + w * (y.vx - x.vx);
  o.vz = x.vz + w * (y.vz - x.vz);
  o.height = x.height + w * (y.height - x.height);
  for (std::size_t i = 0; i < o.locals.size(); ++i) o.locals[i] = x.locals[i] + w * (y.locals[i] - x.locals[i]);
  return o;
}

struct Words {
  std::string label, verb_phrase;
  std::vector<std::string> prompts;
};

Words describe(std::size_t archetype, std::size_t variant) {
  const std::size_t a = variant % 2, b = variant / 2;
  Words w;
  switch (archetype) {
    case WalkStraight: {
      const std::string dir = a == 0 ? "forward" : "backward";
      const std::string adv = b == 0 ? "slowly" : "quickly";
      const std::string adj = b == 0 ? "slow" : "fast";
      w.label = "walk " + dir + " " + adj;
      w.verb_phrase = "walks " + dir + " " + adv;
      w.prompts = {"a person walks " + dir + " " + adv, "someone is walking " + dir + " at a " + adj + " pace",
                   "the person " + adv + " walks " + dir + " in a straight line"};
      break;
    }
    case WalkCircle: {
      const std::string turn = a == 0 ? "left" : "right";
      const std::string size = b == 0 ? "small" : "large";
      w.label = "walk in a " + size + " circle " + turn;
      w.verb_phrase = "walks in a " + size + " circle to the " + turn;
      w.prompts = {"a person walks in a " + size + " circle to the " + turn,
                   "someone walks around a " + size + " circle turning " + turn,
                   "the person circles to the " + turn + " in a " + size + " loop"};
      break;
    }
    case RaiseArm: {
      const std::string side = a == 0 ? "left" : "right";
      const std::string height = b == 0 ? "to shoulder height" : "overhead";
      w.label = "raise " + side + " arm " + (b == 0 ? "shoulder" : "overhead");
      w.verb_phrase = "raises the " + side + " arm " + height;
      w.prompts = {"a person raises the " + side + " arm " + height,
                   "someone lifts their " + side + " arm " + height + " and lowers it",
                   "the person puts the " + side + " arm up " + height};
      break;
    }
    case Squat: {
      const std::string pace = a == 0 ? "slowly" : "quickly";
      const std::string depth = b == 0 ? "shallow" : "deep";
      w.label = "squat " + depth + " " + (a == 0 ? "slow" : "fast");
      w.verb_phrase = "does " + depth + " squats " + pace;
      w.prompts = {"a person does " + depth + " squats " + pace,
                   "someone is squatting " + pace + " with " + depth + " knee bends",
                   "the person " + pace + " performs " + depth + " squats"};
      break;
    }
    case Wave: {
      const std::string speed = a == 0 ? "slowly" : "quickly";
      const std::string side = b == 0 ? "left" : "right";
      w.label = "wave " + side + " hand " + (a == 0 ? "slow" : "fast");
      w.verb_phrase = "waves the " + side + " hand " + speed;
      w.prompts = {"a person waves the " + side + " hand " + speed,
                   "someone " + speed + " waves with their " + side + " hand",
                   "the person greets by waving the " + side + " hand " + speed};
      break;
    }
    default:
      throw std::out_of_range("unknown archetype");
  }
  return w;
}

float to_f32(double v) { return static_cast<float>(v); }

MotionSequence make_sequence(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t length = spec.min_length + rng.index(spec.max_length - spec.min_length + 1);
  const bool composite = rng.bernoulli(spec.composite_fraction);
  auto draw_jitter = [&]() {
    Jitter j;
    j.speed = 1.0 + rng.uniform(-spec.jitter, spec.jitter);
    j.amplitude = 1.0 + rng.uniform(-spec.jitter, spec.jitter);
    j.freq = 1.0 + rng.uniform(-spec.jitter, spec.jitter);
    j.phase = rng.uniform(0.0, 2.0 * kPi);
    return j;
  };

  const std::size_t a1 = rng.index(spec.classes);
  const std::size_t v1 = rng.index(kVariantsPerArchetype);
  std::vector<BodyFrame> body;
  std::vector<std::string> labels;
  MotionSequence out;
  out.archetype = static_cast<std::int32_t>(a1);
  out.variant = static_cast<std::int32_t>(v1);
  out.composite = composite;
  const Words w1 = describe(a1, v1);

  if (!composite) {
    body = segment(a1, v1, length, spec.fps, draw_jitter());
    labels.assign(length, w1.label);
    std::vector<std::size_t> order{0, 1, 2};
    rng.shuffle(order);
    const std::size_t count = 1 + rng.index(3);
    for (std::size_t i = 0; i < count; ++i) out.prompts.push_back(w1.prompts[order[i]]);
  } else {
    std::size_t a2 = rng.index(spec.classes - 1);
    if (a2 >= a1) ++a2;
    const std::size_t v2 = rng.index(kVariantsPerArchetype);
    const Words w2 = describe(a2, v2);
    const std::size_t first = length * 3 / 10 + rng.index(length * 4 / 10 + 1);
    body = segment(a1, v1, first, spec.fps, draw_jitter());
    auto second = segment(a2, v2, length - first, spec.fps, draw_jitter());
    const BodyFrame last = body.back();
    for (std::size_t n = 0; n < second.size(); ++n) {
      const double w = std::min(1.0, static_cast<double>(n + 1) / static_cast<double>(kBlendFrames + 1));
      body.push_back(lerp(last, second[n], w));
    }
    labels.assign(first, w1.label);
    labels.resize(length, w2.label);
    out.prompts.push_back("a person " + w1.verb_phrase + " and then " + w2.verb_phrase);
    if (rng.bernoulli(0.5)) out.prompts.push_back("someone " + w1.verb_phrase + ", then " + w2.verb_phrase);
  }

  // Clean body frames -> world joints, add sensor noise, re-derive the layout.
  const RepresentationSpec rep = RepresentationSpec::toy(5, spec.fps);
  MotionSequence clean;
  clean.spec = rep;
  clean.frames = body_to_frames(body);
  JointTrajectory traj = to_joint_positions(clean);
  for (auto& p : traj.positions.data()) p += spec.noise_m * rng.normal();
  // Frame-0 root back to the planar origin.
  const double ox = traj.positions[0], oz = traj.positions[2];
  for (std::size_t i = 0; i < traj.positions.numel(); i += 3) {
    traj.positions[i] -= ox;
    traj.positions[i + 2] -= oz;
  }
  MotionSequence rebuilt = from_joint_positions(traj, rep);
  out.spec = rep;
  out.frames = std::move(rebuilt.frames);
  for (auto& v : out.frames.data()) v = to_f32(v);
  out.labels = std::move(labels);
  return out;
}

void check_distinct(const SynthSpec& spec) {
  const RepresentationSpec rep = RepresentationSpec::toy(5, spec.fps);
  std::vector<JointTrajectory> canon;
  for (std::size_t a = 0; a < spec.classes; ++a) {
    MotionSequence m;
    m.spec = rep;
    m.frames = body_to_frames(segment(a, 0, spec.min_length, spec.fps, Jitter{}));
    canon.push_back(to_joint_positions(m));
  }
  for (std::size_t i = 0; i < canon.size(); ++i)
    for (std::size_t k = i + 1; k < canon.size(); ++k) {
      const double d = mpjpe_mm(canon[i], canon[k]) / 1000.0;
      if (d < spec.distinct_margin_m) {
        throw std::logic_error("archetypes " + archetype_name(i) + " and " + archetype_name(k) +
                               " are closer than the configured margin");
      }
    }
}

}  // namespace

std::string archetype_name(std::size_t archetype) {
  static const std::array<const char*, kArchetypeCount> names{"walk-straight", "walk-circle", "raise-arm", "squat",
                                                              "wave"};
  return names.at(archetype);
}

std::string variant_label(std::size_t archetype, std::size_t variant) { return describe(archetype, variant).label; }

Corpus synth_corpus(const SynthSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("synth_corpus: count must be at least 1");
  if (spec.classes < 4 || spec.classes > kArchetypeCount)
    throw std::invalid_argument("synth_corpus: classes must be between 4 and 5");
  if (spec.min_length < 2 || spec.max_length < spec.min_length)
    throw std::invalid_argument("synth_corpus: invalid length range");
  check_distinct(spec);
  Corpus corpus(count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) corpus[i] = make_sequence(spec, derive_seed(seed, i));
  return corpus;
}

double mean_interclass_distance_mm(const Corpus& corpus, std::size_t max_pairs, std::uint64_t seed) {
  std::vector<std::size_t> singles;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!corpus[i].composite && corpus[i].archetype >= 0) singles.push_back(i);
  Rng rng(seed);
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t attempt = 0; attempt < max_pairs * 4 && pairs < max_pairs && singles.size() >= 2; ++attempt) {
    const auto& x = corpus[singles[rng.index(singles.size())]];
    const auto& y = corpus[singles[rng.index(singles.size())]];
    if (x.archetype == y.archetype) continue;
    const std::size_t n = std::min(x.length(), y.length());
    const auto jx = to_joint_positions(x), jy = to_joint_positions(y);
    const std::size_t stride = x.spec.joints * 3;
    JointTrajectory px{Tensor({n, x.spec.joints, 3})}, py{Tensor({n, y.spec.joints, 3})};
    std::copy_n(jx.positions.ptr(), n * stride, px.positions.ptr());
    std::copy_n(jy.positions.ptr(), n * stride, py.positions.ptr());
    total += mpjpe_mm(px, py);
    ++pairs;
  }
  if (pairs == 0) throw std::invalid_argument("corpus has no pair of sequences from different archetypes");
  return total / static_cast<double>(pairs);
}

}  // namespace molingo::motion
