#include <cstring>
#include <json.hpp>
#include <set>
#include <sstream>

#include "tfm/error.hpp"
#include "tfm/tensor_io.hpp"
#include "tfm/training.hpp"

namespace tfm {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ostream& out, std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); }

template <typename U>
U get_le(std::istream& in, const std::string& context, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(U)) {
    throw IoError(context + ": truncated " + what);
  }
  return v;
}

template <typename T>
std::string header_json(const Checkpoint<T>& ck) {
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
  for (const auto& r : ck.history) {
    history.push_back({{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
  }
  nlohmann::ordered_json j = {{"version", Checkpoint<T>::kVersion},
                              {"kind", std::string(to_string(ck.model.kind))},
                              {"model", nlohmann::ordered_json::parse(ck.model.to_json())},
                              {"train", nlohmann::ordered_json::parse(ck.train.to_json())},
                              {"epochs", ck.epochs},
                              {"best_epoch", ck.best_epoch},
                              {"best_val_loss", ck.best_val_loss},
                              {"adam_step", ck.adam_step},
                              {"history", history}};
  return j.dump();
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  std::ostringstream out;
  out.write(kMagic, 4);
  put_u32(out, Checkpoint<T>::kVersion);
  const std::string header = header_json(ck);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(out, static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& [name, tensor] : ck.records) {
    if (name.size() > 0xFFFF) {
      throw ValueError("checkpoint: record name too long: " + name.substr(0, 64));
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tft(out, tensor);
  }
  write_file_bytes(path, out.str());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("checkpoint not found: " + path.string());
  }
  const std::string ctx = path.string();
  std::istringstream in(read_file_bytes(path));
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(ctx + ": bad magic at offset 0 (expected \"TFCK\")");
  }
  const auto version = get_le<std::uint32_t>(in, ctx, "version");
  if (version != Checkpoint<T>::kVersion) {
    throw IoError(ctx + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint32_t>(in, ctx, "header length");
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (static_cast<std::size_t>(in.gcount()) != header_len) {
    throw IoError(ctx + ": truncated header");
  }

  Checkpoint<T> ck;
  try {
    const auto j = nlohmann::json::parse(header);
    ck.model = ModelConfig::from_json(j.at("model").dump());
    ck.train = TrainConfig::from_json(j.at("train").dump());
    ck.epochs = j.at("epochs").get<std::size_t>();
    ck.best_epoch = j.at("best_epoch").get<std::size_t>();
    ck.best_val_loss = j.at("best_val_loss").get<double>();
    ck.adam_step = j.at("adam_step").get<std::uint64_t>();
    for (const auto& r : j.at("history")) {
      ck.history.push_back({r.at("epoch").get<std::size_t>(), r.at("lr").get<double>(),
                            r.at("train_loss").get<double>(), r.at("val_loss").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(ctx + ": malformed checkpoint header: " + e.what());
  }

  const auto count = get_le<std::uint32_t>(in, ctx, "record count");
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = get_le<std::uint16_t>(in, ctx, "record name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (static_cast<std::size_t>(in.gcount()) != len) {
      throw IoError(ctx + ": truncated record name");
    }
    ck.records.emplace_back(name, read_tft<T>(in, ctx + " [" + name + "]"));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(ctx + ": trailing bytes after last record");
  }
  return ck;
}

template <typename T>
void load_parameters(Model<T>& model, const Checkpoint<T>& ck) {
  if (ck.model.kind != model.kind()) {
    throw ValueError("checkpoint holds a '" + std::string(to_string(ck.model.kind)) + "' model, not '" +
                     std::string(to_string(model.kind())) + "'");
  }
  std::set<std::string> stored;
  for (const auto& [name, tensor] : ck.records) {
    if (name.rfind("adam.", 0) != 0) {
      stored.insert(name);
    }
  }
  std::set<std::string> expected;
  for (const auto& [name, tensor] : model.params()) {
    expected.insert(name);
  }
  if (stored != expected) {
    std::string missing, extra;
    for (const auto& n : expected) {
      if (!stored.count(n)) missing += (missing.empty() ? "" : ", ") + n;
    }
    for (const auto& n : stored) {
      if (!expected.count(n)) extra += (extra.empty() ? "" : ", ") + n;
    }
    throw ValueError("checkpoint parameter names do not match the model; missing: {" + missing + "}; extra: {" +
                     extra + "}");
  }
  for (const auto& [name, tensor] : ck.records) {
    if (!expected.count(name)) {
      continue;
    }
    Tensor<T>& dst = model.params().at(name);
    if (dst.shape() != tensor.shape()) {
      throw ShapeError("checkpoint parameter '" + name + "' has shape " + to_string(tensor.shape()) +
                       ", model expects " + to_string(dst.shape()));
    }
    auto w = dst.mutable_values();
    std::copy(tensor.values().begin(), tensor.values().end(), w.begin());
  }
}

template <typename T>
std::unique_ptr<Model<T>> restore_model(const Checkpoint<T>& ck) {
  auto model = make_model<T>(ck.model, ck.train.seed);
  load_parameters(*model, ck);
  return model;
}

#define TFM_INSTANTIATE_CHECKPOINT(T)                                                      \
  template void save_checkpoint(const std::filesystem::path&, const Checkpoint<T>&);     \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);                  \
  template void load_parameters(Model<T>&, const Checkpoint<T>&);                        \
  template std::unique_ptr<Model<T>> restore_model(const Checkpoint<T>&);

TFM_INSTANTIATE_CHECKPOINT(float)
TFM_INSTANTIATE_CHECKPOINT(double)

}  // namespace tfm
