#include "signtok/nn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "signtok/error.hpp"

namespace signtok::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <class T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void doubles(const std::vector<Scalar>& v) {
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(Scalar));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<Scalar> doubles(std::size_t n) {
    need(n * sizeof(Scalar));
    std::vector<Scalar> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(Scalar));
    pos_ += n * sizeof(Scalar);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Checkpoint::Entry* Checkpoint::find(std::string_view name) const {
  for (const auto& e : params)
    if (e.name == name) return &e;
  return nullptr;
}

bool Checkpoint::has_component(Component c) const {
  return std::any_of(params.begin(), params.end(), [c](const Entry& e) { return e.component == c; });
}

Checkpoint capture(const ParameterSet& params) {
  Checkpoint ckpt;
  for (const auto& p : params.items()) {
    ckpt.params.push_back({p.name, p.component, p.trainable, p.tensor.rows(), p.tensor.cols(),
                           {p.tensor.values().begin(), p.tensor.values().end()}});
  }
  return ckpt;
}

namespace {
void copy_entry(Parameter& p, const Checkpoint::Entry& e) {
  if (p.tensor.rows() != e.rows || p.tensor.cols() != e.cols) {
    throw DataError("checkpoint entry '" + e.name + "' has shape [" + std::to_string(e.rows) + "x" +
                    std::to_string(e.cols) + "], model expects " + p.tensor.shape_string());
  }
  std::copy(e.values.begin(), e.values.end(), p.tensor.mutable_values().begin());
}
}  // namespace

void restore(ParameterSet& params, const Checkpoint& ckpt, const std::vector<Component>& components) {
  for (Component c : components) {
    if (!ckpt.has_component(c)) {
      throw DataError("checkpoint has no parameters tagged '" + std::string(component_name(c)) + "'");
    }
  }
  for (const auto& e : ckpt.params) {
    if (std::find(components.begin(), components.end(), e.component) == components.end()) continue;
    Parameter* p = params.find(e.name);
    if (!p) throw DataError("model has no parameter '" + e.name + "'");
    copy_entry(*p, e);
  }
}

void restore_all(ParameterSet& params, const Checkpoint& ckpt) {
  for (auto& p : params.items()) {
    const auto* e = ckpt.find(p.name);
    if (!e) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    copy_entry(p, *e);
  }
}

std::string serialize(const Checkpoint& ckpt) {
  Writer w;
  w.pod('S');
  w.pod('G');
  w.pod('C');
  w.pod('K');
  w.pod(Checkpoint::kVersion);
  w.str(ckpt.meta);
  w.pod(ckpt.epoch);
  w.str(ckpt.rng_state);
  w.pod(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params) {
    w.str(e.name);
    w.str(std::string(component_name(e.component)));
    w.pod(static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    w.pod(static_cast<std::uint64_t>(e.rows));
    w.pod(static_cast<std::uint64_t>(e.cols));
    w.doubles(e.values);
  }
  w.pod(static_cast<std::uint32_t>(ckpt.optimizer.size()));
  for (const auto& [name, buf] : ckpt.optimizer) {
    w.str(name);
    w.pod(static_cast<std::uint64_t>(buf.size()));
    w.doubles(buf);
  }
  return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.pod<char>();
  if (std::string(magic, 4) != "SGCK") throw DataError("not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.meta = r.str();
  ckpt.epoch = r.pod<std::uint64_t>();
  ckpt.rng_state = r.str();
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Checkpoint::Entry e;
    e.name = r.str();
    e.component = component_from_name(r.str());
    e.trainable = r.pod<std::uint8_t>() != 0;
    e.rows = r.pod<std::uint64_t>();
    e.cols = r.pod<std::uint64_t>();
    e.values = r.doubles(e.rows * e.cols);
    ckpt.params.push_back(std::move(e));
  }
  const auto m = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < m; ++i) {
    std::string name = r.str();
    const auto len = r.pod<std::uint64_t>();
    ckpt.optimizer[name] = r.doubles(len);
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace signtok::nn
