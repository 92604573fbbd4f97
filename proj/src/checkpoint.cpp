#include "colorbridge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace colorbridge::inline COLORBRIDGE_ABI {

namespace {

constexpr std::size_t kMaxRank = 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const std::string& field) {
    need(1, field);
    return std::uint8_t(bytes_[pos_++]);
  }
  std::string take(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const std::string& field) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(field, "truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

Tensor vec(std::vector<Scalar> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

std::size_t as_size(Scalar v) { return std::size_t(v + Scalar(0.5)); }

bool belongs(const std::string& name, Component c) {
  return name.size() > 2 && name[0] == component_prefix(c) && name[1] == '.';
}

}  // namespace

char component_prefix(Component c) {
  switch (c) {
    case Component::kT: return 'T';
    case Component::kE: return 'E';
    case Component::kC: return 'C';
  }
  return '?';
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

void Checkpoint::set(const std::string& name, Tensor value) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.value = std::move(value);
      return;
    }
  }
  entries_.push_back({name, std::move(value)});
}

std::set<Component> Checkpoint::components() const {
  std::set<Component> out;
  const Tensor* m = find("meta.components");
  if (!m || m->numel() != 3) throw CheckpointError("meta.components", "missing component manifest");
  if ((*m)[0] != 0) out.insert(Component::kT);
  if ((*m)[1] != 0) out.insert(Component::kE);
  if ((*m)[2] != 0) out.insert(Component::kC);
  return out;
}

TrainableFlags Checkpoint::flags() const {
  const Tensor* t = find("meta.trainable");
  if (!t || t->numel() != 3) throw CheckpointError("meta.trainable", "missing trainability flags");
  return {(*t)[0] != 0, (*t)[1] != 0, (*t)[2] != 0};
}

ModelDescriptor Checkpoint::descriptor() const {
  auto get = [&](const std::string& name, std::size_t min_len) -> const Tensor& {
    const Tensor* t = find(name);
    if (!t || t->numel() < min_len) throw CheckpointError(name, "missing or malformed");
    return *t;
  };
  ModelDescriptor d;
  const std::size_t fe = as_size(get("meta.front_end", 1)[0]);
  if (fe > std::size_t(FrontEndKind::kIdentity)) {
    throw CheckpointError("meta.front_end", "unknown front end code " + std::to_string(fe));
  }
  d.front_end = FrontEndKind(fe);
  const Tensor& c = get("meta.colorizer", 8);
  d.colorizer.input_height = as_size(c[0]);
  d.colorizer.input_width = as_size(c[1]);
  d.colorizer.stem_channels = as_size(c[2]);
  d.colorizer.n_res_blocks = as_size(c[3]);
  d.colorizer.upscale = as_size(c[4]);
  d.colorizer.coloru_channels = {as_size(c[5]), as_size(c[6]), as_size(c[7])};
  const Tensor& e = get("meta.encoder", 5);
  d.encoder.in_channels = as_size(e[0]);
  d.encoder.stem_channels = as_size(e[1]);
  d.encoder.stem_kernel = as_size(e[2]);
  d.encoder.stem_stride = as_size(e[3]);
  d.encoder.stem_pool = e[4] != 0;
  if ((e.numel() - 5) % 3 != 0) throw CheckpointError("meta.encoder", "malformed stage list");
  d.encoder.stages.clear();
  for (std::size_t i = 5; i < e.numel(); i += 3) {
    d.encoder.stages.push_back({as_size(e[i]), as_size(e[i + 1]), as_size(e[i + 2])});
  }
  d.n_outputs = as_size(get("meta.n_outputs", 1)[0]);
  return d;
}

std::string Checkpoint::serialize() const {
  std::string out(kCheckpointMagic, 4);
  out.push_back(char(kCheckpointVersion));
  put_u32(out, std::uint32_t(entries_.size()));
  for (const auto& e : entries_) {
    put_u32(out, std::uint32_t(e.name.size()));
    out += e.name;
    put_u32(out, std::uint32_t(e.value.rank()));
    for (auto d : e.value.shape()) put_u32(out, std::uint32_t(d));
    for (auto v : e.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(float(v)));
  }
  return out;
}

Checkpoint Checkpoint::parse(const std::string& bytes) {
  Reader r(bytes);
  const std::string magic = r.take(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) throw CheckpointError("magic", "bad magic bytes");
  const auto version = r.u8("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("version", "unsupported format version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string tag = "entry[" + std::to_string(i) + "]";
    const std::uint32_t name_len = r.u32(tag + ".name_length");
    std::string name = r.take(name_len, tag + ".name");
    const std::uint32_t rank = r.u32(tag + ".rank");
    if (rank == 0 || rank > kMaxRank) {
      throw CheckpointError(tag + ".rank", "invalid rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32(tag + ".dims");
      if (d == 0) throw CheckpointError(tag + ".dims", "zero dimension");
    }
    const std::size_t n = shape_numel(shape);
    const std::string raw = r.take(n * 4, tag + ".data");
    std::vector<Scalar> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(std::uint8_t(raw[k * 4 + b])) << (8 * b);
      data[k] = Scalar(std::bit_cast<float>(bits));
    }
    ckpt.entries_.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!r.done()) throw CheckpointError("trailing", "unexpected bytes after the last entry");
  return ckpt;
}

void Checkpoint::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize();
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Checkpoint make_checkpoint(const ComposedModel& model, std::set<Component> components) {
  Checkpoint ckpt;
  const ModelDescriptor& d = model.descriptor();
  const TrainableFlags& f = model.flags();
  ckpt.set("meta.components", vec({Scalar(components.count(Component::kT)),
                                   Scalar(components.count(Component::kE)),
                                   Scalar(components.count(Component::kC))}));
  ckpt.set("meta.trainable",
           vec({Scalar(f.front_end), Scalar(f.encoder), Scalar(f.head)}));
  ckpt.set("meta.front_end", vec({Scalar(int(d.front_end))}));
  const auto& c = d.colorizer;
  ckpt.set("meta.colorizer",
           vec({Scalar(c.input_height), Scalar(c.input_width), Scalar(c.stem_channels),
                Scalar(c.n_res_blocks), Scalar(c.upscale), Scalar(c.coloru_channels.at(0)),
                Scalar(c.coloru_channels.at(1)), Scalar(c.coloru_channels.at(2))}));
  std::vector<Scalar> enc = {Scalar(d.encoder.in_channels), Scalar(d.encoder.stem_channels),
                             Scalar(d.encoder.stem_kernel), Scalar(d.encoder.stem_stride),
                             Scalar(d.encoder.stem_pool)};
  for (const auto& s : d.encoder.stages) {
    enc.insert(enc.end(), {Scalar(s.channels), Scalar(s.blocks), Scalar(s.stride)});
  }
  ckpt.set("meta.encoder", vec(std::move(enc)));
  ckpt.set("meta.n_outputs", vec({Scalar(d.n_outputs)}));

  auto add_all = [&](const std::vector<nn::NamedVariable>& vars) {
    for (const auto& v : vars) {
      for (auto comp : components) {
        if (belongs(v.name, comp)) ckpt.entries().push_back({v.name, v.var.value()});
      }
    }
  };
  add_all(model.named_parameters());
  add_all(model.named_buffers());
  return ckpt;
}

void save_checkpoint(const ComposedModel& model, const std::filesystem::path& path,
                     std::set<Component> components) {
  make_checkpoint(model, std::move(components)).write(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return Checkpoint::read(path); }

void restore(ComposedModel& model, const Checkpoint& ckpt, const std::set<Component>& components) {
  const auto available = ckpt.components();
  for (auto comp : components) {
    if (!available.count(comp)) {
      throw CheckpointError("meta.components",
                            std::string("component ") + component_prefix(comp) + " not in file");
    }
  }
  auto copy = [&](std::vector<nn::NamedVariable> vars) {
    for (auto& v : vars) {
      bool wanted = false;
      for (auto comp : components) wanted = wanted || belongs(v.name, comp);
      if (!wanted) continue;
      const Tensor* t = ckpt.find(v.name);
      if (!t) throw CheckpointError(v.name, "missing from checkpoint");
      if (t->shape() != v.var.shape()) {
        throw CheckpointError(v.name, "shape " + to_string(t->shape()) + " does not match model " +
                                          to_string(v.var.shape()));
      }
      v.var.mutable_value() = *t;
    }
  };
  copy(model.named_parameters());
  copy(model.named_buffers());
}

std::unique_ptr<ComposedModel> model_from_checkpoint(const Checkpoint& ckpt, nn::Rng& rng) {
  auto model = build_model(ckpt.descriptor(), ckpt.flags(), rng);
  restore(*model, ckpt, ckpt.components());
  return model;
}

}  // namespace colorbridge
