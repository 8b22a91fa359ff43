#include "tempo/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tempo/error.hpp"

namespace tempo::data {

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3;
      cp = lead & 0x07;
    } else {
      throw ValidationError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      if (i + k >= text.size()) throw ValidationError("truncated UTF-8 sequence at offset " + std::to_string(i));
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80)
        throw ValidationError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  for (char32_t c : text) {
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (c >> 18));
      out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

Vocab::Vocab(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
  for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], i);
}

Vocab Vocab::build(const std::vector<char32_t>& text) { return Vocab(text); }

std::size_t Vocab::id(char32_t c) const {
  const auto it = index_.find(c);
  if (it == index_.end()) throw DomainError("code point U+" + std::to_string(static_cast<unsigned>(c)) + " not in vocabulary");
  return it->second;
}

std::vector<std::size_t> Vocab::encode(const std::vector<char32_t>& text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (char32_t c : text) ids.push_back(id(c));
  return ids;
}

void TokenBatch::validate(std::size_t vocab_size) const {
  if (sequences.empty()) throw DomainError("token batch is empty");
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (sequences[s].size() < 2) throw DomainError("sequence " + std::to_string(s) + " is shorter than 2 tokens");
    for (std::size_t id : sequences[s])
      if (id >= vocab_size)
        throw DomainError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                          std::to_string(vocab_size));
  }
}

std::size_t TokenBatch::positions() const {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.empty() ? 0 : s.size() - 1;
  return total;
}

std::vector<std::size_t> TokenBatch::targets() const {
  std::vector<std::size_t> out;
  out.reserve(positions());
  for (const auto& s : sequences) out.insert(out.end(), s.begin() + 1, s.end());
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return buf.str();
}

Corpus split(std::vector<char32_t> text, Vocab vocab, double valid_fraction, const std::filesystem::path& path) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) throw DomainError("valid_fraction must be in (0, 1)");
  if (text.size() < 4) throw DomainError("corpus " + path.string() + " is too short");
  Corpus c;
  c.vocab = std::move(vocab);
  const auto ids = c.vocab.encode(text);
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(ids.size()) * (1.0 - valid_fraction)));
  c.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
  c.valid.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  return c;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, double valid_fraction) {
  auto text = decode_utf8(read_file(path));
  auto vocab = Vocab::build(text);
  return split(std::move(text), std::move(vocab), valid_fraction, path);
}

Corpus load_corpus(const std::filesystem::path& path, const Vocab& vocab, double valid_fraction) {
  return split(decode_utf8(read_file(path)), vocab, valid_fraction, path);
}

TokenBatch sample_windows(const std::vector<std::size_t>& ids, std::size_t context, std::size_t batch_size,
                          std::mt19937_64& rng) {
  if (ids.size() < context + 1) throw DomainError("token stream shorter than one window");
  std::uniform_int_distribution<std::size_t> start(0, ids.size() - context - 1);
  TokenBatch batch;
  batch.sequences.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto s = static_cast<std::ptrdiff_t>(start(rng));
    batch.sequences.emplace_back(ids.begin() + s, ids.begin() + s + static_cast<std::ptrdiff_t>(context) + 1);
  }
  return batch;
}

std::vector<TokenBatch> sequential_windows(const std::vector<std::size_t>& ids, std::size_t context,
                                           std::size_t batch_size, std::size_t max_windows) {
  if (context == 0 || batch_size == 0) throw DomainError("context and batch size must be positive");
  std::vector<TokenBatch> out;
  std::size_t count = 0;
  for (std::size_t s = 0; s + context < ids.size(); s += context) {
    if (max_windows != 0 && count == max_windows) break;
    if (out.empty() || out.back().sequences.size() == batch_size) out.emplace_back();
    const auto b = ids.begin() + static_cast<std::ptrdiff_t>(s);
    out.back().sequences.emplace_back(b, b + static_cast<std::ptrdiff_t>(context) + 1);
    ++count;
  }
  return out;
}

void PairBatch::validate() const {
  if (images.rank() != 2 || texts.rank() != 2) throw ShapeError("pair batch sides must be matrices");
  if (images.rows() != texts.rows())
    throw ShapeError("pair batch sides differ: " + images.shape_string() + " vs " + texts.shape_string());
  if (images.rows() < 2) throw DomainError("contrastive batch needs at least 2 pairs, got " + std::to_string(images.rows()));
}

PairBatch PairBatch::select(const std::vector<std::size_t>& rows) const {
  PairBatch out{Tensor({rows.size(), images.cols()}), Tensor({rows.size(), texts.cols()})};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(images.row(rows[i]).begin(), images.row(rows[i]).end(), out.images.row(i).begin());
    std::copy(texts.row(rows[i]).begin(), texts.row(rows[i]).end(), out.texts.row(i).begin());
  }
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

PairBatch read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  std::size_t di = 0, dt = 0;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string expect_img = "img_" + std::to_string(di);
    const std::string expect_txt = "txt_" + std::to_string(dt);
    if (dt == 0 && header[j] == expect_img) {
      ++di;
    } else if (header[j] == expect_txt) {
      ++dt;
    } else {
      throw ValidationError(path.string() + ": unexpected header column '" + header[j] + "'");
    }
  }
  if (di == 0 || dt == 0) throw ValidationError(path.string() + ": header needs img_* and txt_* columns");

  std::vector<double> img, txt;
  std::size_t n = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != di + dt)
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(di + dt) +
                            " fields, got " + std::to_string(cells.size()));
    for (std::size_t j = 0; j < cells.size(); ++j) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[j].size() || !std::isfinite(v))
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cells[j] + "'");
      (j < di ? img : txt).push_back(v);
    }
    ++n;
  }
  if (n == 0) throw ValidationError(path.string() + ": no data rows");
  return {Tensor::matrix(n, di, std::move(img)), Tensor::matrix(n, dt, std::move(txt))};
}

void write_pairs_csv(const PairBatch& pairs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t di = pairs.images.cols(), dt = pairs.texts.cols();
  for (std::size_t j = 0; j < di; ++j) out << (j ? "," : "") << "img_" << j;
  for (std::size_t j = 0; j < dt; ++j) out << ",txt_" << j;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t j = 0; j < di; ++j) out << (j ? "," : "") << pairs.images.at(i, j);
    for (std::size_t j = 0; j < dt; ++j) out << ',' << pairs.texts.at(i, j);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

PairBatch generate_pairs(const PairGenConfig& cfg, std::uint64_t seed) {
  if (cfg.n < 2 || cfg.clusters == 0 || cfg.latent_dim == 0 || cfg.image_dim == 0 || cfg.text_dim == 0)
    throw DomainError("generate_pairs: sizes must be positive and n >= 2");
  if (!(cfg.noise_min >= 0.0 && cfg.noise_min <= cfg.noise_max)) throw DomainError("generate_pairs: bad noise range");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_matrix = [&](std::size_t r, std::size_t c, double scale) {
    Tensor t({r, c});
    for (double& v : t.values()) v = normal(rng) * scale;
    return t;
  };
  const Tensor centers = random_matrix(cfg.clusters, cfg.latent_dim, 1.0);
  const Tensor to_image = random_matrix(cfg.image_dim, cfg.latent_dim, 1.0 / std::sqrt(double(cfg.latent_dim)));
  const Tensor to_text = random_matrix(cfg.text_dim, cfg.latent_dim, 1.0 / std::sqrt(double(cfg.latent_dim)));
  std::uniform_int_distribution<std::size_t> pick(0, cfg.clusters - 1);
  std::uniform_real_distribution<double> noise_level(cfg.noise_min, cfg.noise_max);

  PairBatch out{Tensor({cfg.n, cfg.image_dim}), Tensor({cfg.n, cfg.text_dim})};
  std::vector<double> z(cfg.latent_dim);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const std::size_t c = pick(rng);
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) z[j] = centers.at(c, j) + cfg.instance_scale * normal(rng);
    const double sigma = noise_level(rng);
    for (std::size_t r = 0; r < cfg.image_dim; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cfg.latent_dim; ++j) acc += to_image.at(r, j) * z[j];
      out.images.at(i, r) = acc + sigma * normal(rng);
    }
    for (std::size_t r = 0; r < cfg.text_dim; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cfg.latent_dim; ++j) acc += to_text.at(r, j) * z[j];
      out.texts.at(i, r) = acc + sigma * normal(rng);
    }
  }
  return out;
}

}  // namespace tempo::data
