#include <gtest/gtest.h>

#include <cstring>

#include "fundus/checkpoint.hpp"
#include "fundus/error.hpp"
#include "fundus/io.hpp"
#include "temp_dir.hpp"

using namespace fundus;
using namespace fundus::io;

namespace {

models::Model small_model() { return models::Model::initialize(models::preset("cnn6-tiny"), 21); }

std::string message_of(std::span<const std::uint8_t> bytes) {
  try {
    load_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto m = small_model();
  const auto bytes = save_checkpoint(m);
  const auto loaded = load_checkpoint(bytes);
  EXPECT_EQ(loaded.config(), m.config());
  EXPECT_EQ(save_checkpoint(loaded), bytes);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(loaded.params().entries()[i].value, m.params().entries()[i].value);
    EXPECT_EQ(loaded.params().entries()[i].trainable, m.params().entries()[i].trainable);
  }
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = save_checkpoint(small_model());
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::memcmp(bytes.data(), "MDGC", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  const std::uint32_t len = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | bytes[11] << 24;
  const std::string arch(bytes.begin() + 12, bytes.begin() + 12 + len);
  EXPECT_EQ(models::architecture_from_json(arch), models::preset("cnn6-tiny"));
}

TEST(Checkpoint, RejectsBadMagicAndVersion) {
  auto bytes = save_checkpoint(small_model());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_NE(message_of(bad).find("bad magic"), std::string::npos);
  bad = bytes;
  bad[4] = 2;
  EXPECT_NE(message_of(bad).find("version 2"), std::string::npos);
  EXPECT_NE(message_of(std::span<const std::uint8_t>(bytes.data(), 2)).find("truncated"), std::string::npos);
}

TEST(Checkpoint, TruncationNamesTheTensor) {
  const auto m = small_model();
  const auto bytes = save_checkpoint(m);
  // Cut in the middle of the last tensor's values.
  const std::string msg = message_of(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 12));
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find(m.params().entries().back().name), std::string::npos) << msg;

  auto extra = bytes;
  extra.push_back(0);
  EXPECT_NE(message_of(extra).find("trailing"), std::string::npos);
}

TEST(Checkpoint, TensorsMustMatchTheArchitecture) {
  // Same tensors under a different embedded architecture.
  const auto m = small_model();
  auto other = models::preset("cnn6-tiny");
  other.layers[0].filters = 16;
  const auto wrong = models::Model::initialize(other, 1);
  auto bytes = save_checkpoint(m);
  const auto wrong_bytes = save_checkpoint(wrong);
  const std::uint32_t len = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | bytes[11] << 24;
  const std::uint32_t wlen = wrong_bytes[8] | wrong_bytes[9] << 8 | wrong_bytes[10] << 16 | wrong_bytes[11] << 24;
  std::vector<std::uint8_t> spliced(wrong_bytes.begin(), wrong_bytes.begin() + 12 + wlen);
  spliced.insert(spliced.end(), bytes.begin() + 12 + len, bytes.end());
  EXPECT_THROW(load_checkpoint(spliced), FormatError);
}

TEST(Checkpoint, FileHelpers) {
  oracle::TempDir dir;
  const auto m = small_model();
  write_checkpoint(dir / "m.ckpt", m);
  EXPECT_EQ(save_checkpoint(read_checkpoint(dir / "m.ckpt")), save_checkpoint(m));
  EXPECT_THROW(read_checkpoint(dir / "absent.ckpt"), DataError);
}
