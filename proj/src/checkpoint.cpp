#include "molingo/checkpoint.hpp"

#include "molingo/container.hpp"

namespace molingo::ckpt {

namespace {
constexpr std::uint32_t kTagConfig = 1;
constexpr std::uint32_t kTagTensor = 2;
}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<io::Record> records;
  nlohmann::json head{{"kind", ckpt.kind}, {"config", ckpt.config}};
  io::ByteWriter cfg;
  cfg.string(head.dump());
  records.push_back({kTagConfig, cfg.take()});
  for (const auto& [name, t] : ckpt.tensors) {
    io::ByteWriter w;
    w.string(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f32(static_cast<float>(v));
    records.push_back({kTagTensor, w.take()});
  }
  io::write_container(path, std::string_view(kMagic, 8), kVersion, records);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto records = io::read_container(path, std::string_view(kMagic, 8), kVersion);
  if (records.empty() || records.front().tag != kTagConfig)
    throw io::FormatError(path.string() + ": checkpoint has no config record");
  Checkpoint out;
  {
    io::ByteReader r(records.front().payload);
    nlohmann::json head;
    try {
      head = nlohmann::json::parse(r.string());
      out.kind = head.at("kind").get<std::string>();
      out.config = head.at("config");
    } catch (const nlohmann::json::exception& e) {
      throw io::FormatError(path.string() + ": malformed checkpoint config: " + e.what());
    }
  }
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].tag != kTagTensor) throw io::FormatError(path.string() + ": unexpected record tag");
    io::ByteReader r(records[i].payload);
    std::string name = r.string();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_numel(shape);
    if (n * 4 != r.remaining()) throw io::FormatError(path.string() + ": tensor " + name + " has the wrong size");
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f32();
    out.tensors.emplace(std::move(name), std::move(t));
  }
  return out;
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != expected_kind)
    throw io::FormatError(path.string() + ": expected a " + expected_kind + " checkpoint, found " + c.kind);
  return c;
}

const Tensor& require_tensor(const Checkpoint& ckpt, const std::string& name) {
  auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw io::FormatError("checkpoint is missing tensor " + name);
  return it->second;
}

std::map<std::string, Tensor> with_prefix_removed(const std::map<std::string, Tensor>& tensors,
                                                   const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : tensors)
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name.substr(prefix.size()), t);
  return out;
}

void add_with_prefix(std::map<std::string, Tensor>& dst, const std::map<std::string, Tensor>& src,
                     const std::string& prefix) {
  for (const auto& [name, t] : src) dst[prefix + name] = t;
}

}  // namespace molingo::ckpt
