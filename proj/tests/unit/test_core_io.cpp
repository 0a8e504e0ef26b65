#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "nirev/io.hpp"
#include "oracles.hpp"

using namespace nirev;

TEST(Frame, RejectsOutOfRangeAndNaN) {
  EXPECT_THROW(Frame(2, 1, {0.0, 1.5}), InvariantError);
  EXPECT_THROW(Frame(2, 1, {0.0, -0.1}), InvariantError);
  EXPECT_THROW(Frame(2, 1, {0.0, std::nan("")}), InvariantError);
  EXPECT_THROW(Frame(2, 2, {0.0, 0.5}), InvariantError);
  EXPECT_NO_THROW(Frame(2, 1, {0.0, 1.0}));
}

TEST(EventStream, ValidatesOrderBoundsWindowAndPolarity) {
  EXPECT_THROW(EventStream(4, 4, 0, 10, {{5, 0, 0, 1}, {3, 0, 0, 1}}), InvariantError);
  EXPECT_THROW(EventStream(4, 4, 0, 10, {{1, 4, 0, 1}}), InvariantError);
  EXPECT_THROW(EventStream(4, 4, 0, 10, {{11, 0, 0, 1}}), InvariantError);
  EXPECT_THROW(EventStream(4, 4, 0, 10, {{1, 0, 0, 0}}), InvariantError);
  EXPECT_THROW(EventStream(4, 4, 5, 4, {}), InvariantError);
}

TEST(EventStream, NormalizedSortsCanonically) {
  auto s = EventStream::normalized(4, 4, 0, 10, {{5, 1, 0, 1}, {5, 0, 1, -1}, {5, 0, 0, 1}, {2, 3, 3, -1}});
  const std::vector<Event> want{{2, 3, 3, -1}, {5, 0, 0, 1}, {5, 1, 0, 1}, {5, 0, 1, -1}};
  EXPECT_EQ(std::vector<Event>(s.events().begin(), s.events().end()), want);
}

TEST(FeatureTensor, ConcatAndSliceAreInverse) {
  std::mt19937_64 rng(1);
  auto a = oracle::random_tensor<float>(2, 3, 4, rng);
  auto b = oracle::random_tensor<float>(3, 3, 4, rng);
  auto c = concat_channels(a, b);
  EXPECT_EQ(c.channels(), 5);
  EXPECT_EQ(slice_channels(c, 0, 2), a);
  EXPECT_EQ(slice_channels(c, 2, 3), b);
  EXPECT_THROW(concat_channels(a, oracle::random_tensor<float>(1, 4, 4, rng)), ShapeError);
  EXPECT_THROW(slice_channels(c, 4, 2), ShapeError);
}

TEST(FeatureTensor, FrameConversionClamps) {
  FeatureTensor<float> t(1, 1, 3, std::vector<float>{-0.5f, 0.25f, 2.0f});
  const Frame f = to_frame_clamped(t);
  EXPECT_EQ(f.at(0, 0), 0.0);
  EXPECT_EQ(f.at(1, 0), 0.25);
  EXPECT_EQ(f.at(2, 0), 1.0);
}

TEST(Evt1, RoundTripsRandomStreams) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20; ++i) {
    auto s = oracle::random_stream(37, 11, 100, 5000, std::size_t(i * 17), rng);
    const auto bytes = io::encode_events(s);
    EXPECT_EQ(bytes.size(), io::kEventHeaderBytes + io::kEventRecordBytes * s.size());
    EXPECT_EQ(io::decode_events(bytes), s);
  }
}

TEST(Evt1, ByteLayoutIsLittleEndian) {
  EventStream s(3, 2, 1, 0x0102, {{0x0101, 2, 1, -1}});
  const auto b = io::encode_events(s);
  const std::vector<std::uint8_t> want{
      'E', 'V', 'T', '1', 3, 0, 0, 0, 2, 0, 0, 0,                  // geometry
      1, 0, 0, 0, 0, 0, 0, 0, 2, 1, 0, 0, 0, 0, 0, 0,              // window
      1, 0, 0, 0, 0, 0, 0, 0,                                      // count
      1, 1, 0, 0, 0, 0, 0, 0, 2, 0, 1, 0, 0xFF};                   // record
  EXPECT_EQ(b, want);
}

TEST(Evt1, TruncationAtEveryOffsetIsReported) {
  std::mt19937_64 rng(3);
  const auto bytes = io::encode_events(oracle::random_stream(8, 8, 0, 100, 5, rng));
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::span<const std::uint8_t> head(bytes.data(), cut);
    EXPECT_THROW(io::decode_events(head), FormatError) << "cut at " << cut;
  }
  try {
    io::decode_events(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 1));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), std::int64_t(io::kEventHeaderBytes + 4 * io::kEventRecordBytes));
  }
}

TEST(Evt1, RejectsCorruptContent) {
  EventStream s(4, 4, 0, 100, {{10, 1, 1, 1}, {20, 2, 2, -1}});
  auto good = io::encode_events(s);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_events(bad_magic), FormatError);

  auto bad_polarity = good;
  bad_polarity[io::kEventHeaderBytes + 12] = 0;
  EXPECT_THROW(io::decode_events(bad_polarity), FormatError);

  auto out_of_bounds = good;
  out_of_bounds[io::kEventHeaderBytes + 8] = 9;
  EXPECT_THROW(io::decode_events(out_of_bounds), FormatError);

  auto unsorted = good;
  unsorted[io::kEventHeaderBytes] = 50;  // first timestamp after the second
  EXPECT_THROW(io::decode_events(unsorted), FormatError);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(io::decode_events(trailing), FormatError);
}

TEST(Vox1, RoundTripAndLengthCheck) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-3, 3);
  std::vector<float> d(3 * 4 * 5);
  for (auto& v : d) v = u(rng);
  VoxelGrid g(3, 4, 5, d);
  auto bytes = io::encode_voxel(g);
  EXPECT_EQ(bytes.size(), 16u + 4u * d.size());
  EXPECT_EQ(io::decode_voxel(bytes), g);
  bytes.pop_back();
  EXPECT_THROW(io::decode_voxel(bytes), FormatError);
  bytes.push_back(0);
  bytes.push_back(0);
  EXPECT_THROW(io::decode_voxel(bytes), FormatError);
}

TEST(Pgm, SixteenAndEightBitRoundTrip) {
  std::mt19937_64 rng(9);
  const Frame f = oracle::random_frame(13, 7, rng);
  const Frame f16 = io::decode_pgm(io::encode_pgm(f, 16));
  const Frame f8 = io::decode_pgm(io::encode_pgm(f, 8));
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_LE(std::abs(f16.data()[i] - f.data()[i]), 0.5 / 65535 + 1e-12);
    EXPECT_LE(std::abs(f8.data()[i] - f.data()[i]), 0.5 / 255 + 1e-12);
  }
  // Quantized values survive a second trip unchanged.
  EXPECT_EQ(io::decode_pgm(io::encode_pgm(f16, 16)), f16);
}

TEST(Pgm, SixteenBitIsBigEndian) {
  const Frame f(1, 1, {1.0});
  const auto b = io::encode_pgm(f, 16);
  ASSERT_GE(b.size(), 2u);
  EXPECT_EQ(b[b.size() - 2], 0xFF);
  EXPECT_EQ(b[b.size() - 1], 0xFF);
  const std::string hdr = "P5\n1 1\n65535\n";
  std::vector<std::uint8_t> raw(hdr.begin(), hdr.end());
  raw.push_back(0x80);
  raw.push_back(0x00);
  EXPECT_DOUBLE_EQ(io::decode_pgm(raw).at(0, 0), 32768.0 / 65535.0);
}

TEST(Pgm, RejectsMalformed) {
  const std::string p2 = "P2\n1 1\n255\n0\n";
  EXPECT_THROW(io::decode_pgm(std::vector<std::uint8_t>(p2.begin(), p2.end())), FormatError);
  const std::string short_data = "P5\n2 2\n255\n\x01\x02";
  EXPECT_THROW(io::decode_pgm(std::vector<std::uint8_t>(short_data.begin(), short_data.end())), FormatError);
}

TEST(Csv, RoundTrip) {
  std::mt19937_64 rng(11);
  const auto s = oracle::random_stream(20, 10, 0, 999, 40, rng);
  std::stringstream ss;
  io::write_events_csv(s, ss);
  EXPECT_EQ(ss.str().substr(0, 8), "t,x,y,p\n");
  EXPECT_EQ(io::read_events_csv(ss, 20, 10, 0, 999), s);
}

TEST(Csv, RejectsBadRows) {
  std::stringstream bad("t,x,y,p\n1,2,3,0\n");
  EXPECT_THROW(io::read_events_csv(bad, 10, 10), std::exception);
  std::stringstream junk("t,x,y,p\n1,2\n");
  EXPECT_THROW(io::read_events_csv(junk, 10, 10), std::exception);
}

TEST(Prm1, RoundTripAndTruncation) {
  std::vector<io::NamedTensor> ts{{"a.weight", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"b", {1}, {-0.5f}}, {"empty", {0}, {}}};
  const auto bytes = io::encode_params(ts);
  const auto back = io::decode_params(bytes);
  ASSERT_EQ(back.size(), ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    EXPECT_EQ(back[i].name, ts[i].name);
    EXPECT_EQ(back[i].shape, ts[i].shape);
    EXPECT_EQ(back[i].data, ts[i].data);
  }
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    EXPECT_THROW(io::decode_params(std::span<const std::uint8_t>(bytes.data(), cut)), FormatError);
  }
}

TEST(Files, WriteReadThroughFilesystem) {
  const auto dir = std::filesystem::temp_directory_path() / "nirev_core_io_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(2);
  const auto s = oracle::random_stream(16, 16, 0, 500, 100, rng);
  io::write_events(s, dir / "e.evt");
  EXPECT_EQ(io::read_events(dir / "e.evt"), s);
  std::filesystem::remove_all(dir);
}
