#include "tempo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tempo/error.hpp"

namespace tempo::train {

namespace {

constexpr char kMagic[8] = {'T', 'E', 'M', 'P', 'O', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void tensors(const NamedTensors& ts) {
    pod<std::uint64_t>(ts.size());
    for (const auto& [name, t] : ts) {
      str(name);
      pod<std::uint64_t>(t.rank());
      for (auto d : t.shape()) pod<std::uint64_t>(d);
      for (double v : t.values()) pod(v);
    }
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view in, std::string section) : in_(in), section_(std::move(section)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  NamedTensors tensors() {
    NamedTensors out;
    const auto count = pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
      auto name = str();
      const auto rank = pod<std::uint64_t>();
      if (rank > 8) fail("implausible tensor rank");
      std::vector<std::size_t> shape(rank);
      std::uint64_t total = 1;
      for (auto& d : shape) {
        d = pod<std::uint64_t>();
        total *= d;
      }
      need(total * sizeof(double));
      std::vector<double> data(total);
      std::memcpy(data.data(), in_.data() + pos_, total * sizeof(double));
      pos_ += total * sizeof(double);
      out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
  }
  bool done() const { return pos_ == in_.size(); }
  void expect_done() {
    if (!done()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const { throw IntegrityError(section_, what); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) fail("truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
  std::string section_;
};

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string encode_checkpoint(const Checkpoint& c) {
  std::vector<std::pair<std::string, std::string>> sections;
  {
    Writer w;
    w.str(c.task);
    w.pod<std::uint64_t>(c.config_hash);
    w.pod<std::int64_t>(c.step);
    w.pod<double>(c.loss_accum);
    w.pod<std::int64_t>(c.loss_count);
    sections.emplace_back("meta", w.take());
  }
  {
    Writer w;
    w.str(c.config_text);
    sections.emplace_back("config", w.take());
  }
  {
    Writer w;
    w.pod<std::uint64_t>(c.vocab.size());
    for (auto cp : c.vocab) w.pod(cp);
    sections.emplace_back("vocab", w.take());
  }
  {
    Writer w;
    w.tensors(c.model);
    sections.emplace_back("model", w.take());
  }
  {
    Writer w;
    w.tensors(c.tempnet);
    sections.emplace_back("tempnet", w.take());
  }
  {
    Writer w;
    w.pod<std::uint64_t>(c.optimizer_steps.size());
    for (auto s : c.optimizer_steps) w.pod(s);
    w.tensors(c.optimizer);
    sections.emplace_back("optimizer", w.take());
  }
  {
    Writer w;
    w.str(c.rng_state);
    sections.emplace_back("rng", w.take());
  }

  Writer out;
  for (char ch : kMagic) out.pod(ch);
  out.pod(kVersion);
  out.pod<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    out.str(name);
    out.str(payload);
    out.pod<std::uint64_t>(fnv1a(payload));
  }
  return out.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader header(bytes, "header");
  for (char ch : kMagic)
    if (header.pod<char>() != ch) header.fail("bad magic");
  const auto version = header.pod<std::uint32_t>();
  if (version != kVersion) header.fail("unsupported version " + std::to_string(version));
  const auto count = header.pod<std::uint32_t>();

  Checkpoint c;
  const char* expected[] = {"meta", "config", "vocab", "model", "tempnet", "optimizer", "rng"};
  if (count != std::size(expected)) header.fail("expected 7 sections, found " + std::to_string(count));
  for (const char* name : expected) {
    auto fail = [name](const std::string& what) { throw IntegrityError(name, what); };
    std::string got;
    std::string payload;
    std::uint64_t checksum = 0;
    try {
      got = header.str();
      payload = header.str();
      checksum = header.pod<std::uint64_t>();
    } catch (const IntegrityError&) {
      fail("truncated");
    }
    if (got != name) fail("found section '" + got + "' out of order");
    if (fnv1a(payload) != checksum) fail("checksum mismatch");
    Reader r(payload, name);
    const std::string_view which = name;
    if (which == "meta") {
      c.task = r.str();
      c.config_hash = r.pod<std::uint64_t>();
      c.step = r.pod<std::int64_t>();
      c.loss_accum = r.pod<double>();
      c.loss_count = r.pod<std::int64_t>();
    } else if (which == "config") {
      c.config_text = r.str();
    } else if (which == "vocab") {
      const auto n = r.pod<std::uint64_t>();
      for (std::uint64_t i = 0; i < n; ++i) c.vocab.push_back(r.pod<std::uint32_t>());
    } else if (which == "model") {
      c.model = r.tensors();
    } else if (which == "tempnet") {
      c.tempnet = r.tensors();
    } else if (which == "optimizer") {
      const auto n = r.pod<std::uint64_t>();
      for (std::uint64_t i = 0; i < n; ++i) c.optimizer_steps.push_back(r.pod<std::int64_t>());
      c.optimizer = r.tensors();
    } else {
      c.rng_state = r.str();
    }
    r.expect_done();
  }
  header.expect_done();
  if (c.config_hash != fnv1a(c.config_text)) throw IntegrityError("config", "hash does not match text");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name, const std::string& section) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IntegrityError(section, "missing tensor '" + name + "'");
}

}  // namespace tempo::train
