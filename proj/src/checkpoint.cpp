#include <bit>
#include <cstring>
#include <iostream>

#include "refnms/errors.hpp"
#include "refnms/version.hpp"
#include "refnms/trainer.hpp"
#include "text_util.hpp"

namespace refnms {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'E', 'F', 'N', 'M', 'S', 'C', 'K'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '!'};
constexpr std::uint32_t kFileVersion = kCheckpointFormat;

class Writer {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void array(const ad::Array& a) {
    u32(static_cast<std::uint32_t>(a.rank()));
    for (auto d : a.shape) u64(d);
    raw(a.data.data(), a.data.size() * sizeof(double));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  void raw(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw ParseError("corrupt checkpoint: truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > data_.size() - pos_) throw ParseError("corrupt checkpoint: bad string length");
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  ad::Array array() {
    const std::uint32_t rank = u32();
    if (rank > 4) throw ParseError("corrupt checkpoint: bad tensor rank");
    ad::Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = u64();
      if (d > (std::uint64_t{1} << 32)) throw ParseError("corrupt checkpoint: bad tensor dimension");
      total *= d;
    }
    if (total * sizeof(double) > data_.size() - pos_) throw ParseError("corrupt checkpoint: truncated tensor");
    ad::Array a(std::move(shape));
    raw(a.data.data(), a.data.size() * sizeof(double));
    return a;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  ck.params.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kFileVersion);
  w.u64(ck.config_hash);
  w.str(format_train_config(ck.train_config));
  const ModelConfig& mc = ck.params.config;
  w.u64(mc.vocab_size);
  w.u64(mc.word_dim);
  w.u64(mc.hidden);
  w.u64(mc.feature_dim);
  w.u64(ck.vocab.max_sentence_length());
  w.u64(ck.vocab.size());
  for (const auto& word : ck.vocab.words()) w.str(word);
  w.u64(ck.epochs_completed);
  const auto entries = ck.params.entries();
  w.u64(entries.size());
  for (const auto& e : entries) {
    w.str(e.name);
    w.array(*e.array);
  }
  const bool has_state = ck.optimizer.m.size() == entries.size();
  w.u64(ck.optimizer.step);
  w.u32(has_state ? 1 : 0);
  if (has_state) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      w.array(ck.optimizer.m[i]);
      w.array(ck.optimizer.v[i]);
    }
  }
  w.raw(kTrailer, sizeof kTrailer);
  detail::write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError("not a refnms checkpoint: " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kFileVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config_hash = r.u64();
  ck.train_config = parse_train_config(r.str());
  ModelConfig mc;
  mc.vocab_size = r.u64();
  mc.word_dim = r.u64();
  mc.hidden = r.u64();
  mc.feature_dim = r.u64();
  const std::uint64_t max_len = r.u64();
  const std::uint64_t nwords = r.u64();
  if (nwords != mc.vocab_size) throw ShapeError("checkpoint vocabulary size disagrees with model dims");
  std::vector<std::string> words;
  for (std::uint64_t i = 0; i < nwords; ++i) words.push_back(r.str());
  try {
    ck.vocab = Vocabulary(std::move(words), max_len);
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("corrupt checkpoint: ") + e.what());
  }
  ck.epochs_completed = r.u64();
  ck.params.config = mc;
  auto entries = ck.params.entries();
  const std::uint64_t ntensors = r.u64();
  if (ntensors != entries.size()) throw ParseError("corrupt checkpoint: tensor count " + std::to_string(ntensors));
  for (auto& e : entries) {
    const std::string name = r.str();
    if (name != e.name) throw ParseError("corrupt checkpoint: expected tensor " + e.name + ", found " + name);
    *e.array = r.array();
  }
  ck.params.validate();
  ck.optimizer.step = r.u64();
  if (r.u32() == 1) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ck.optimizer.m.push_back(r.array());
      ck.optimizer.v.push_back(r.array());
      if (ck.optimizer.m.back().shape != entries[i].array->shape ||
          ck.optimizer.v.back().shape != entries[i].array->shape) {
        throw ShapeError("optimizer moment for " + entries[i].name + " has the wrong shape");
      }
    }
  }
  char trailer[4];
  r.raw(trailer, sizeof trailer);
  if (std::memcmp(trailer, kTrailer, sizeof trailer) != 0 || !r.done()) {
    throw ParseError("corrupt checkpoint: bad trailer");
  }
  return ck;
}

void check_feature_dim(const Checkpoint& ckpt, std::size_t feature_dim) {
  if (ckpt.params.config.feature_dim != feature_dim) {
    throw ShapeError("checkpoint expects feature_dim " + std::to_string(ckpt.params.config.feature_dim) +
                     ", data has " + std::to_string(feature_dim));
  }
}

bool check_config_hash(const Checkpoint& ckpt, const TrainConfig& cfg) {
  if (config_hash(cfg, ckpt.params.config) == ckpt.config_hash) return true;
  std::clog << "warning: checkpoint was trained with a different configuration\n";
  return false;
}

}  // namespace refnms
