#include <doctest.h>

#include "mmt/embed.hpp"

using namespace mmt;

namespace {

using T = Tensor<double>;

T eye(std::int64_t n) {
  T m({n, n});
  for (std::int64_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
  return m;
}

// identity projection so token values equal the flattened voxels
ParamTree<double> vision_params(std::int64_t volume) {
  ParamTree<double> p;
  p.insert("embed/video/w", eye(volume));
  p.insert("embed/video/b", T({volume}));
  return p;
}

RawSample make_video(std::int64_t F, std::int64_t H, std::int64_t W,
                     std::uint64_t seed) {
  RawSample s;
  s.modality = Modality::kVideo;
  s.dims = {F, H, W, 3};
  RngStream rng(seed);
  s.payload.resize(F * H * W * 3);
  for (auto& v : s.payload) v = static_cast<float>(rng.uniform());
  return s;
}

RawSample make_image(std::int64_t H, std::int64_t W, std::uint64_t seed) {
  RawSample s;
  s.modality = Modality::kImage;
  s.dims = {H, W, 3};
  RngStream rng(seed);
  s.payload.resize(H * W * 3);
  for (auto& v : s.payload) v = static_cast<float>(rng.uniform());
  return s;
}

}  // namespace

TEST_SUITE("embedder") {

TEST_CASE("video patch counts match the 4x16x16 kernel arithmetic") {
  PatchKernel k{4, 16, 16};
  const std::int64_t volume = 4 * 16 * 16 * 3;
  ParamTree<double> p;
  p.insert("embed/video/w", T({volume, 8}));
  p.insert("embed/video/b", T({8}));
  Tape<double> tp(false);

  auto v = make_video(16, 256, 256, 1);
  auto tb = patchify_video(tp, std::span<const RawSample>(&v, 1), k, p);
  CHECK(tb.seq_len() == 1024);
  CHECK(tb.t_f == 4);
  CHECK(tb.t_h == 16);
  CHECK(tb.t_w == 16);

  auto one = make_video(4, 16, 16, 2);
  auto tb1 = patchify_video(tp, std::span<const RawSample>(&one, 1), k, p);
  CHECK(tb1.seq_len() == 1);

  auto med = make_video(8, 64, 32, 3);
  auto tbm = patchify_video(tp, std::span<const RawSample>(&med, 1), k, p);
  CHECK(tbm.seq_len() == 16);
}

TEST_CASE("voxel contents match an index-arithmetic enumeration oracle") {
  PatchKernel k{2, 4, 4};
  const std::int64_t volume = 2 * 4 * 4 * 3;
  auto p = vision_params(volume);
  const std::int64_t F = 4, H = 8, W = 8;
  auto v = make_video(F, H, W, 7);
  Tape<double> tp(false);
  auto tb = patchify_video(tp, std::span<const RawSample>(&v, 1), k, p);
  REQUIRE(tb.seq_len() == 2 * 2 * 2);

  // independent enumeration: voxel (ti,hi,wi), inner (df,dy,dx,c)
  std::int64_t tok = 0;
  for (std::int64_t ti = 0; ti < F / k.f; ++ti)
    for (std::int64_t hi = 0; hi < H / k.h; ++hi)
      for (std::int64_t wi = 0; wi < W / k.w; ++wi, ++tok) {
        std::int64_t slot = 0;
        for (std::int64_t df = 0; df < k.f; ++df)
          for (std::int64_t dy = 0; dy < k.h; ++dy)
            for (std::int64_t dx = 0; dx < k.w; ++dx)
              for (std::int64_t c = 0; c < 3; ++c, ++slot) {
                const std::int64_t f = ti * k.f + df;
                const std::int64_t y = hi * k.h + dy;
                const std::int64_t x = wi * k.w + dx;
                const double expect = v.payload[((f * H + y) * W + x) * 3 + c];
                CHECK(tb.tokens[tok * volume + slot] ==
                      doctest::Approx(expect));
              }
      }
}

TEST_CASE("non-divisible video axes are rejected by name") {
  PatchKernel k{4, 16, 16};
  auto p = vision_params(4 * 16 * 16 * 3);
  Tape<double> tp(false);
  auto bad = make_video(16, 60, 64, 5);
  CHECK_THROWS_WITH_AS(
      patchify_video(tp, std::span<const RawSample>(&bad, 1), k, p),
      doctest::Contains("height"), shape_error);
  auto badf = make_video(6, 64, 64, 5);
  CHECK_THROWS_WITH_AS(
      patchify_video(tp, std::span<const RawSample>(&badf, 1), k, p),
      doctest::Contains("frame"), shape_error);
}

TEST_CASE("image token counts and tiling equivalence") {
  PatchKernel k{4, 16, 16};
  const std::int64_t volume = 4 * 16 * 16 * 3;
  ParamTree<double> p;
  p.insert("embed/video/w", T({volume, 4}));
  p.insert("embed/video/b", T({4}));
  Tape<double> tp(false);

  auto img = make_image(256, 256, 11);
  auto tb = patchify_image(tp, std::span<const RawSample>(&img, 1), k, p);
  CHECK(tb.seq_len() == 256);
  CHECK(tb.t_f == 1);

  auto tiny = make_image(16, 16, 12);
  CHECK(patchify_image(tp, std::span<const RawSample>(&tiny, 1), k, p)
            .seq_len() == 1);

  // equals patchify_video of the explicitly repeated 4-frame video, bit-exact
  auto small = make_image(32, 32, 13);
  auto ti = patchify_image(tp, std::span<const RawSample>(&small, 1), k, p);
  RawSample rep;
  rep.modality = Modality::kVideo;
  rep.dims = {4, 32, 32, 3};
  for (int r = 0; r < 4; ++r)
    rep.payload.insert(rep.payload.end(), small.payload.begin(),
                       small.payload.end());
  auto tv = patchify_video(tp, std::span<const RawSample>(&rep, 1), k, p);
  REQUIRE(ti.tokens.size() == tv.tokens.size());
  for (std::int64_t i = 0; i < ti.tokens.size(); ++i)
    CHECK(ti.tokens[i] == tv.tokens[i]);
}

TEST_CASE("spectrogram patch counts and row-major order") {
  ParamTree<double> p;
  p.insert("embed/spectrogram/w", eye(16 * 16));
  p.insert("embed/spectrogram/b", T({16 * 16}));
  Tape<double> tp(false);

  RawSample s;
  s.modality = Modality::kSpectrogram;
  s.dims = {128, 128};
  s.payload.assign(128 * 128, 0.5f);
  CHECK(patchify_spectrogram(tp, std::span<const RawSample>(&s, 1), 16, 16, p)
            .seq_len() == 64);

  s.dims = {16, 16};
  s.payload.assign(256, 0.25f);
  CHECK(patchify_spectrogram(tp, std::span<const RawSample>(&s, 1), 16, 16, p)
            .seq_len() == 1);

  // 32x48 -> 2x3 = 6 patches; contents vs index enumeration
  s.dims = {32, 48};
  RngStream rng(21);
  s.payload.resize(32 * 48);
  for (auto& v : s.payload) v = static_cast<float>(rng.uniform());
  auto tb = patchify_spectrogram(tp, std::span<const RawSample>(&s, 1), 16, 16, p);
  REQUIRE(tb.seq_len() == 6);
  std::int64_t tok = 0;
  for (std::int64_t hi = 0; hi < 2; ++hi)
    for (std::int64_t wi = 0; wi < 3; ++wi, ++tok)
      for (std::int64_t dy = 0; dy < 16; ++dy)
        for (std::int64_t dx = 0; dx < 16; ++dx)
          CHECK(tb.tokens[tok * 256 + dy * 16 + dx] ==
                doctest::Approx(s.payload[(hi * 16 + dy) * 48 + wi * 16 + dx]));

  s.dims = {32, 40};
  s.payload.assign(32 * 40, 0.0f);
  CHECK_THROWS_AS(
      patchify_spectrogram(tp, std::span<const RawSample>(&s, 1), 16, 16, p),
      shape_error);
}

TEST_CASE("waveform windows and caps") {
  ParamTree<double> p;
  p.insert("embed/waveform/w", eye(256));
  p.insert("embed/waveform/b", T({256}));
  Tape<double> tp(false);

  RawSample s;
  s.modality = Modality::kWaveform;
  s.dims = {65536};
  s.payload.assign(65536, 0.1f);
  CHECK(embed_waveform(tp, std::span<const RawSample>(&s, 1), p).seq_len() ==
        256);

  s.dims = {256};
  s.payload.assign(256, 0.1f);
  CHECK(embed_waveform(tp, std::span<const RawSample>(&s, 1), p).seq_len() == 1);

  // 1024 samples -> 4 windows matching a slicing oracle
  s.dims = {1024};
  RngStream rng(31);
  s.payload.resize(1024);
  for (auto& v : s.payload) v = static_cast<float>(rng.normal());
  auto tb = embed_waveform(tp, std::span<const RawSample>(&s, 1), p);
  REQUIRE(tb.seq_len() == 4);
  for (std::int64_t t = 0; t < 4; ++t)
    for (std::int64_t i = 0; i < 256; ++i)
      CHECK(tb.tokens[t * 256 + i] == doctest::Approx(s.payload[t * 256 + i]));

  s.dims = {0};
  s.payload.clear();
  CHECK_THROWS_AS(embed_waveform(tp, std::span<const RawSample>(&s, 1), p),
                  shape_error);
}

TEST_CASE("text lookups, truncation, and errors") {
  ParamTree<double> p;
  RngStream rng(41);
  p.insert("embed/text/table", T::randn({16, 4}, rng));
  Tape<double> tp(false);

  RawSample s;
  s.modality = Modality::kText;
  s.tokens = {3, 7};
  s.dims = {2};
  auto tb = embed_text(tp, std::span<const RawSample>(&s, 1), p, 16);
  const auto& table = p.at("embed/text/table");
  for (int i = 0; i < 4; ++i) {
    CHECK(tb.tokens[i] == table[3 * 4 + i]);
    CHECK(tb.tokens[4 + i] == table[7 * 4 + i]);
  }

  RawSample long_seq;
  long_seq.modality = Modality::kText;
  long_seq.tokens.assign(40, 5);
  long_seq.dims = {40};
  CHECK(embed_text(tp, std::span<const RawSample>(&long_seq, 1), p, 16)
            .seq_len() == 16);

  RawSample empty;
  empty.modality = Modality::kText;
  empty.dims = {0};
  CHECK_THROWS_AS(embed_text(tp, std::span<const RawSample>(&empty, 1), p, 16),
                  shape_error);

  RawSample oob;
  oob.modality = Modality::kText;
  oob.tokens = {99};
  oob.dims = {1};
  CHECK_THROWS_AS(embed_text(tp, std::span<const RawSample>(&oob, 1), p, 16),
                  std::out_of_range);
}

TEST_CASE("dilated positions: identity, stride, nesting, rejection") {
  auto full = dilated_positions(16, 16);
  for (std::int64_t i = 0; i < 16; ++i) CHECK(full[i] == i);

  auto quarter = dilated_positions(16, 4);
  CHECK(quarter == std::vector<std::int64_t>{0, 4, 8, 12});

  auto d8 = dilated_positions(32, 8);
  auto d32 = dilated_positions(32, 32);
  for (int i = 0; i < 8; ++i) CHECK(d8[i] == d32[i * 4]);

  CHECK_THROWS_AS(dilated_positions(16, 3), shape_error);
  CHECK_THROWS_AS(dilated_positions(8, 16), shape_error);
}

TEST_CASE("apply_positions sums per-axis tables") {
  const std::int64_t D = 4;
  ParamTree<double> p;
  RngStream rng(51);
  p.insert("pos/temporal", T::randn({8, D}, rng));
  p.insert("pos/height", T::randn({8, D}, rng));
  p.insert("pos/width", T::randn({8, D}, rng));
  Tape<double> tp(false);

  TokenBatch<double> one;
  one.tokens = Tensor<double>({1, 1, D});
  one.modality = Modality::kImage;
  one.batch = 1;
  one.t_f = one.t_h = one.t_w = 1;
  auto r1 = apply_positions(tp, one, p);
  for (int i = 0; i < D; ++i)
    CHECK(r1.tokens[i] == doctest::Approx(p.at("pos/temporal")[i] +
                                          p.at("pos/height")[i] +
                                          p.at("pos/width")[i]));

  // half-resolution sums equal stride-2 subsampling of full-resolution sums
  auto grid = [&](std::int64_t th, std::int64_t tw) {
    TokenBatch<double> b;
    b.tokens = Tensor<double>({1, th * tw, D});
    b.modality = Modality::kImage;
    b.batch = 1;
    b.t_f = 1;
    b.t_h = th;
    b.t_w = tw;
    return apply_positions(tp, b, p);
  };
  auto fullg = grid(8, 8);
  auto halfg = grid(4, 4);
  for (std::int64_t h = 0; h < 4; ++h)
    for (std::int64_t w = 0; w < 4; ++w)
      for (std::int64_t i = 0; i < D; ++i)
        CHECK(halfg.tokens[(h * 4 + w) * D + i] ==
              doctest::Approx(fullg.tokens[((2 * h) * 8 + 2 * w) * D + i]));

  // the temporal axis is truncated independently of spatial dilation
  TokenBatch<double> vid;
  vid.tokens = Tensor<double>({1, 2 * 2 * 2, D});
  vid.modality = Modality::kVideo;
  vid.batch = 1;
  vid.t_f = 2;
  vid.t_h = 2;
  vid.t_w = 2;
  auto rv = apply_positions(tp, vid, p);
  const auto& tt = p.at("pos/temporal");
  const auto& hh = p.at("pos/height");
  const auto& ww = p.at("pos/width");
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t i = 0; i < D; ++i)
      CHECK(rv.tokens[(t * 4) * D + i] ==
            doctest::Approx(tt[t * D + i] + hh[0 * D + i] + ww[0 * D + i]));

  // patch count exceeding buckets is rejected
  TokenBatch<double> wide;
  wide.tokens = Tensor<double>({1, 16 * 16, D});
  wide.modality = Modality::kImage;
  wide.batch = 1;
  wide.t_f = 1;
  wide.t_h = 16;
  wide.t_w = 16;
  CHECK_THROWS_AS(apply_positions(tp, wide, p), shape_error);
}

TEST_CASE("drop_token keeps an exact count in original order") {
  Tape<double> tp(false);
  RngStream rng = derive_stream(9, "droptoken", 0);

  TokenBatch<double> b;
  b.tokens = Tensor<double>({2, 1024, 2});
  for (std::int64_t i = 0; i < b.tokens.size(); ++i) b.tokens[i] = double(i);
  b.modality = Modality::kVideo;
  b.batch = 2;
  b.t_f = 4;
  b.t_h = 16;
  b.t_w = 16;

  const double d = 1.0 - 1.0 / 4.0;  // matches image token count at T_F = 4
  auto dropped = drop_token(tp, b, d, rng);
  CHECK(dropped.seq_len() == 256);
  for (const auto& kept : dropped.kept) {
    CHECK(kept.size() == 256);
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i] > kept[i - 1]);
  }
  // token values travel with their indices
  for (std::int64_t e = 0; e < 2; ++e)
    for (std::int64_t i = 0; i < 256; ++i)
      CHECK(dropped.tokens[(e * 256 + i) * 2] ==
            doctest::Approx(double((e * 1024 + dropped.kept[e][i]) * 2)));

  auto same = drop_token(tp, b, 0.0, rng);
  CHECK(same.seq_len() == 1024);
  CHECK(same.kept[0].size() == 1024);
  for (std::int64_t i = 0; i < same.tokens.size(); ++i)
    CHECK(same.tokens[i] == b.tokens[i]);

  CHECK_THROWS_AS(drop_token(tp, b, 1.0, rng), std::out_of_range);
  CHECK_THROWS_AS(drop_token(tp, b, -0.1, rng), std::out_of_range);
}

TEST_CASE("drop_token keeps tokens uniformly") {
  Tape<double> tp(false);
  TokenBatch<double> b;
  b.tokens = Tensor<double>({1, 10, 1});
  b.modality = Modality::kImage;
  b.batch = 1;
  b.t_f = 1;
  b.t_h = 2;
  b.t_w = 5;

  std::vector<int> counts(10, 0);
  RngStream rng = derive_stream(7, "droptoken-mc");
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    auto dropped = drop_token(tp, b, 0.5, rng);
    CHECK(dropped.kept[0].size() == 5);
    for (auto idx : dropped.kept[0]) counts[idx]++;
  }
  for (int i = 0; i < 10; ++i) {
    const double freq = double(counts[i]) / trials;
    CHECK(std::abs(freq - 0.5) < 0.02);
  }
}

TEST_CASE("token-count law over random divisible shapes") {
  RngStream rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    PatchKernel k{1 + static_cast<std::int64_t>(rng.uniform_int(3)),
                  2 + static_cast<std::int64_t>(rng.uniform_int(3)),
                  2 + static_cast<std::int64_t>(rng.uniform_int(3))};
    const std::int64_t tf = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t th = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t tw = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    auto v = make_video(k.f * tf, k.h * th, k.w * tw, 100 + trial);
    const std::int64_t volume = k.f * k.h * k.w * 3;
    ParamTree<double> p;
    p.insert("embed/video/w", T({volume, 3}));
    p.insert("embed/video/b", T({3}));
    Tape<double> tp(false);
    auto tb = patchify_video(tp, std::span<const RawSample>(&v, 1), k, p);
    CHECK(tb.seq_len() == tf * th * tw);
  }
}

}  // TEST_SUITE
