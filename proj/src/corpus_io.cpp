#include <map>

#include "molingo/container.hpp"
#include "molingo/errors.hpp"
#include "molingo/motion.hpp"

namespace molingo::motion {

namespace {

constexpr std::uint32_t kTagMeta = 1;
constexpr std::uint32_t kTagSequence = 2;

class StringTable {
 public:
  std::uint32_t intern(const std::string& s) {
    auto [it, inserted] = index_.try_emplace(s, static_cast<std::uint32_t>(strings_.size()));
    if (inserted) strings_.push_back(s);
    return it->second;
  }
  const std::vector<std::string>& strings() const { return strings_; }

 private:
  std::map<std::string, std::uint32_t> index_;
  std::vector<std::string> strings_;
};

}  // namespace

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  if (corpus.empty()) {
    io::write_container(path, std::string_view(kCorpusMagic, 8), kCorpusVersion, {});
    return;
  }
  const RepresentationSpec& spec = corpus.front().spec;
  StringTable table;
  std::vector<io::Record> records;
  records.reserve(corpus.size() + 1);
  for (const auto& m : corpus) {
    m.validate();
    if (!(m.spec == spec)) throw ShapeError("write_corpus: sequences use different representations");
    io::ByteWriter w;
    w.u64(m.length());
    w.u32(static_cast<std::uint32_t>(m.archetype));
    w.u32(static_cast<std::uint32_t>(m.variant));
    w.u8(m.composite ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(m.prompts.size()));
    for (const auto& p : m.prompts) w.u32(table.intern(p));
    w.u8(m.labels.empty() ? 0 : 1);
    for (const auto& l : m.labels) w.u32(table.intern(l));
    for (double v : m.frames.data()) w.f32(static_cast<float>(v));
    records.push_back({kTagSequence, w.take()});
  }
  io::ByteWriter meta;
  meta.f64(spec.fps);
  meta.u8(static_cast<std::uint8_t>(spec.layout));
  meta.u32(static_cast<std::uint32_t>(spec.joints));
  meta.u32(static_cast<std::uint32_t>(spec.dim()));
  for (auto f : spec.facing) meta.u32(static_cast<std::uint32_t>(f));
  meta.u32(static_cast<std::uint32_t>(table.strings().size()));
  for (const auto& s : table.strings()) meta.string(s);
  records.insert(records.begin(), io::Record{kTagMeta, meta.take()});
  io::write_container(path, std::string_view(kCorpusMagic, 8), kCorpusVersion, records);
}

Corpus read_corpus(const std::filesystem::path& path) {
  const auto records = io::read_container(path, std::string_view(kCorpusMagic, 8), kCorpusVersion);
  if (records.empty()) return {};
  if (records.front().tag != kTagMeta) throw io::FormatError(path.string() + ": missing metadata record");

  io::ByteReader meta(records.front().payload);
  RepresentationSpec spec;
  spec.fps = meta.f64();
  spec.layout = static_cast<Layout>(meta.u8());
  spec.joints = meta.u32();
  const std::size_t d = meta.u32();
  for (auto& f : spec.facing) f = meta.u32();
  try {
    spec.validate();
  } catch (const ShapeError& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
  if (d != spec.dim()) throw io::FormatError(path.string() + ": stored width disagrees with joint count");
  std::vector<std::string> strings(meta.u32());
  for (auto& s : strings) s = meta.string();
  auto lookup = [&](std::uint32_t i) -> const std::string& {
    if (i >= strings.size()) throw io::FormatError(path.string() + ": string index out of range");
    return strings[i];
  };

  Corpus corpus;
  corpus.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].tag != kTagSequence) throw io::FormatError(path.string() + ": unexpected record tag");
    io::ByteReader in(records[r].payload);
    MotionSequence m;
    m.spec = spec;
    const std::uint64_t n = in.u64();
    if (n == 0 || n > in.remaining()) throw io::FormatError(path.string() + ": bad sequence length");
    m.archetype = static_cast<std::int32_t>(in.u32());
    m.variant = static_cast<std::int32_t>(in.u32());
    m.composite = in.u8() != 0;
    m.prompts.resize(in.u32());
    for (auto& p : m.prompts) p = lookup(in.u32());
    if (in.u8() != 0) {
      m.labels.resize(n);
      for (auto& l : m.labels) l = lookup(in.u32());
    }
    m.frames = Tensor({static_cast<std::size_t>(n), d});
    for (auto& v : m.frames.data()) v = in.f32();
    if (!in.done()) throw io::FormatError(path.string() + ": trailing bytes in sequence record");
    corpus.push_back(std::move(m));
  }
  return corpus;
}

}  // namespace molingo::motion
