#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "layerfuse/composer.hpp"
#include "layerfuse/error.hpp"
#include "layerfuse/npy.hpp"
#include "layerfuse/ops.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"
#include "temp_dir.hpp"

using namespace layerfuse;
using layerfuse::testkit::TempDir;

namespace {

const std::filesystem::path kConfigs = LAYERFUSE_SOURCE_DIR "/configs";

ModelLayout vggish() { return load_layout(kConfigs / "vggish.json"); }
ModelLayout cnn14() { return load_layout(kConfigs / "cnn14.json"); }
ModelLayout ast() { return load_layout(kConfigs / "ast.json"); }

}  // namespace

TEST(TimeAlign, VggishConvLayer) {
  const auto layout = vggish();
  const auto f = time_align(layout.layer("2"), layout, Tensor::zeros({1, 64, 64, 96}));
  EXPECT_EQ(f.tensor.shape(), (Shape{1, 4096, 6}));
  EXPECT_EQ(f.source_layer, "2");
}

TEST(TimeAlign, VggishFullyConnectedLayerRepeats) {
  const auto layout = vggish();
  std::mt19937_64 rng(2);
  const auto v = testkit::random_tensor({1, 4096}, rng);
  const auto f = time_align(layout.layer("18"), layout, v);
  EXPECT_EQ(f.tensor.shape(), (Shape{1, 4096, 6}));
  for (std::size_t d = 0; d < 4096; d += 97)
    for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(f.tensor.at(0, d, t), v.at(0, d));
}

TEST(TimeAlign, Cnn14RatioPolicy) {
  const auto layout = cnn14();
  // Block 5 at T = 64: [1, 1024, F=2, T/32=2].
  const auto f = time_align(layout.layer("5"), layout, Tensor::zeros({1, 1024, 2, 2}), 64);
  EXPECT_EQ(f.tensor.shape(), (Shape{1, 2048, 2}));
  // Block 1 at T = 320: [1, 64, 32, 160] -> T_o = 10.
  const auto g = time_align(layout.layer("1"), layout, Tensor::zeros({1, 64, 32, 160}), 320);
  EXPECT_EQ(g.tensor.shape(), (Shape{1, 2048, 10}));
  EXPECT_THROW(time_align(layout.layer("1"), layout, Tensor::zeros({1, 64, 32, 160})), DataError);
}

TEST(TimeAlign, ShortLayerRepeatsFrames) {
  ModelLayout layout{"m", {TimePolicy::Kind::fixed, 4}, std::nullopt, {{"x", LayerKind::conv4d, {1, 1, 1, 2}}}};
  const auto f = time_align(layout.layer("x"), layout, Tensor({1, 1, 1, 2}, {3, 8}));
  EXPECT_EQ(std::vector<float>(f.tensor.data().begin(), f.tensor.data().end()), (std::vector<float>{3, 3, 8, 8}));
}

TEST(TimeAlign, ShapeMismatchIsAnError) {
  const auto layout = vggish();
  EXPECT_THROW(time_align(layout.layer("2"), layout, Tensor::zeros({1, 64, 64, 95})), DataError);
  EXPECT_THROW(time_align(layout.layer("18"), layout, Tensor::zeros({1, 4096, 1})), DataError);
}

TEST(EncodeClip, SegmentsConcatenateAlongTime) {
  const auto layout = vggish();
  SegmentBatches two{{"2", {Tensor::zeros({1, 64, 64, 96}), Tensor::zeros({1, 64, 64, 96})}}};
  EXPECT_EQ(encode_clip(layout, two).at("2").tensor.shape(), (Shape{1, 4096, 12}));

  std::mt19937_64 rng(4);
  const auto seg = testkit::random_tensor({1, 64, 64, 96}, rng);
  const auto single = encode_clip(layout, {{"2", {seg}}}).at("2").tensor;
  EXPECT_EQ(single, time_align(layout.layer("2"), layout, seg).tensor);
}

TEST(EncodeClip, BlockStructure) {
  const auto layout = vggish();
  SegmentBatches three{{"5",
                        {Tensor::filled({1, 128, 32, 48}, 1.0f), Tensor::filled({1, 128, 32, 48}, 2.0f),
                         Tensor::filled({1, 128, 32, 48}, 3.0f)}}};
  const auto f = encode_clip(layout, three).at("5").tensor;
  ASSERT_EQ(f.shape(), (Shape{1, 4096, 18}));
  for (std::size_t d = 0; d < 4096; d += 511)
    for (std::size_t t = 0; t < 18; ++t) EXPECT_EQ(f.at(0, d, t), static_cast<float>(1 + t / 6));
}

TEST(EncodeClip, SegmentCountMismatch) {
  const auto layout = vggish();
  SegmentBatches bad{{"2", {Tensor::zeros({1, 64, 64, 96})}},
                     {"5", {Tensor::zeros({1, 128, 32, 48}), Tensor::zeros({1, 128, 32, 48})}}};
  EXPECT_THROW(encode_clip(layout, bad), DataError);
}

TEST(EncodeClip, IdenticalSegmentsSummarizeLikeOne) {
  const auto layout = vggish();
  std::mt19937_64 rng(8);
  const auto seg = testkit::random_tensor({1, 256, 16, 24}, rng);
  const auto one = summarize(encode_clip(layout, {{"8", {seg}}}).at("8")).vector;
  const auto four = summarize(encode_clip(layout, {{"8", {seg, seg, seg, seg}}}).at("8")).vector;
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(four[i], one[i], 1e-6 * std::max(1.0f, std::abs(one[i])));
}

TEST(Fuse, Widths) {
  const auto v = vggish();
  const auto mid = time_align(v.layer("10"), v, Tensor::zeros({1, 256, 16, 24}));
  const auto late = time_align(v.layer("15"), v, Tensor::zeros({1, 512, 8, 12}));
  const auto fused = fuse(mid, late);
  EXPECT_EQ(fused.tensor.shape(), (Shape{1, 8192, 6}));
  EXPECT_EQ(fused.provenance, (std::vector<LayerId>{"10", "15"}));

  const auto c = cnn14();
  const auto b3 = time_align(c.layer("3"), c, Tensor::zeros({1, 256, 8, 8}), 64);
  const auto b5 = time_align(c.layer("5"), c, Tensor::zeros({1, 1024, 2, 2}), 64);
  EXPECT_EQ(fuse(b3, b5).tensor.shape(), (Shape{1, 4096, 2}));
  const auto b6 = time_align(c.layer("6"), c, Tensor::zeros({1, 2048, 2, 2}), 64);
  EXPECT_EQ(fuse(b3, b6).tensor.extent(1), b3.tensor.extent(1) + b6.tensor.extent(1));
}

TEST(Fuse, SelfFusionDuplicates) {
  std::mt19937_64 rng(3);
  const TimeAlignedFeature a{testkit::random_tensor({1, 5, 3}, rng), "x"};
  const auto f = fuse(a, a).tensor;
  for (std::size_t d = 0; d < 5; ++d)
    for (std::size_t t = 0; t < 3; ++t) {
      EXPECT_EQ(f.at(0, d, t), a.tensor.at(0, d, t));
      EXPECT_EQ(f.at(0, d + 5, t), a.tensor.at(0, d, t));
    }
}

TEST(Fuse, TimeMismatch) {
  const TimeAlignedFeature a{Tensor::zeros({1, 2, 3}), "a"};
  const TimeAlignedFeature b{Tensor::zeros({1, 2, 4}), "b"};
  EXPECT_THROW(fuse(a, b), DataError);
}

TEST(Summarize, Cases) {
  const auto layout = ast();
  std::mt19937_64 rng(12);
  const auto cls = testkit::random_tensor({1, 768}, rng);
  const auto e = summarize(time_align(layout.layer("5"), layout, cls));
  ASSERT_EQ(e.vector.shape(), (Shape{1, 768}));
  for (std::size_t d = 0; d < 768; ++d) EXPECT_EQ(e.vector.at(0, d), 2.0f * cls.at(0, d));

  const auto c = cnn14();
  const auto short_clip = summarize(time_align(c.layer("4"), c, testkit::random_tensor({1, 512, 4, 4}, rng), 64));
  const auto long_clip = summarize(time_align(c.layer("4"), c, testkit::random_tensor({1, 512, 4, 62}, rng), 992));
  EXPECT_EQ(short_clip.vector.shape(), long_clip.vector.shape());

  const FusedFeature constant{Tensor::filled({1, 6, 5}, -0.75f), {"a", "b"}};
  EXPECT_EQ(summarize(constant).vector, Tensor::filled({1, 6}, -1.5f));
}

TEST(Segments, Plan) {
  EXPECT_EQ(plan_segments(96, 96), (std::vector<Segment>{{0, 96, 0}}));
  EXPECT_EQ(plan_segments(200, 96), (std::vector<Segment>{{0, 96, 0}, {96, 96, 0}}));  // remainder 8 dropped
  EXPECT_EQ(plan_segments(250, 96), (std::vector<Segment>{{0, 96, 0}, {96, 96, 0}, {192, 58, 38}}));
  EXPECT_EQ(plan_segments(240, 96), (std::vector<Segment>{{0, 96, 0}, {96, 96, 0}, {192, 48, 48}}));
  EXPECT_EQ(plan_segments(20, 96), (std::vector<Segment>{{0, 20, 76}}));
}

TEST(Segments, SplitEdgePads) {
  std::vector<float> frames(7);
  for (std::size_t i = 0; i < 7; ++i) frames[i] = static_cast<float>(i);
  const auto parts = split_segments(Tensor({1, 1, 1, 7}, frames), 4);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(std::vector<float>(parts[1].data().begin(), parts[1].data().end()), (std::vector<float>{4, 5, 6, 6}));
}

TEST(Layout, ShippedConfigs) {
  const auto v = vggish();
  EXPECT_EQ(v.layers.size(), 9u);
  EXPECT_EQ(v.segment_frames, 96u);
  EXPECT_EQ(v.output_frames(std::nullopt), 6u);
  EXPECT_EQ(cnn14().output_frames(320), 10u);
  EXPECT_EQ(ast().layers.size(), 11u);
}

TEST(Layout, RejectsInvalid) {
  using nlohmann::json;
  const json bad_kind = {{"name", "m"}, {"time_policy", {{"fixed", 2}}}, {"layers", {{{"id", "1"}, {"kind", "x"}, {"shape", {1, 2}}}}}};
  const json bad_rank = {{"name", "m"}, {"time_policy", {{"fixed", 2}}}, {"layers", {{{"id", "1"}, {"kind", "timeless"}, {"shape", {1, 2, 3}}}}}};
  const json zero_ratio = {{"name", "m"}, {"time_policy", {{"ratio", 0}}}, {"layers", {{{"id", "1"}, {"kind", "timeless"}, {"shape", {1, 2}}}}}};
  const json no_policy = {{"name", "m"}, {"layers", json::array()}};
  for (const auto& j : {bad_kind, bad_rank, zero_ratio, no_policy}) EXPECT_THROW(layout_from_json(j), ConfigError);
  EXPECT_THROW(load_layout("/nonexistent/layout.json"), ConfigError);
}

TEST(ComposeEmbeddings, RowsFollowManifestOrder) {
  TempDir dir;
  testkit::PlantedSpec spec;
  spec.train = 6;
  spec.valid = 2;
  spec.test = 2;
  const auto path = testkit::write_planted_task(dir.path(), "toy", "A", spec);
  const auto manifest = load_manifest(path);

  const auto fused = compose_embeddings(manifest, "A", "B");
  EXPECT_EQ(fused.rows(), 10u);
  EXPECT_EQ(fused.dims, 32u);
  EXPECT_EQ(fused.ids.front(), "toy-0");
  EXPECT_EQ(fused.provenance, (std::vector<LayerId>{"A", "B"}));

  // Same rows regardless of worker count.
  EXPECT_EQ(compose_embeddings(manifest, "A", "B", 4).values, fused.values);

  // Single-layer rows equal the direct pipeline.
  const std::vector<LayerId> only_a{"A"};
  const auto single = compose_embeddings(manifest, only_a);
  EXPECT_EQ(single.dims, 16u);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto t = load_tensor(manifest.samples[i].tensors.at("A").front());
    const auto direct = mean_plus_max_time(flatten_cf(maxpool_time(t, *plan_pool(8, 2))));
    const auto row = single.row(i);
    EXPECT_TRUE(std::equal(row.begin(), row.end(), direct.data().begin()));
    // Fused rows start with the mid-layer block.
    const auto frow = fused.row(i);
    EXPECT_TRUE(std::equal(row.begin(), row.end(), frow.begin()));
  }

  // Self-fusion doubles the width with duplicated coordinates.
  const auto self = compose_embeddings(manifest, "A", "A");
  EXPECT_EQ(self.dims, 32u);
  for (std::size_t i = 0; i < self.rows(); ++i) {
    const auto r = self.row(i);
    EXPECT_TRUE(std::equal(r.begin(), r.begin() + 16, r.begin() + 16));
  }
}

TEST(ComposeEmbeddings, PermutedManifestPermutesRows) {
  TempDir dir;
  testkit::PlantedSpec spec;
  spec.train = 5;
  spec.valid = 2;
  spec.test = 2;
  const auto manifest = load_manifest(testkit::write_planted_task(dir.path(), "toy", "A", spec));
  auto reversed = manifest;
  std::reverse(reversed.samples.begin(), reversed.samples.end());
  const auto a = compose_embeddings(manifest, "A", "B");
  const auto b = compose_embeddings(reversed, "A", "B");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ra = a.row(i);
    const auto rb = b.row(a.rows() - 1 - i);
    EXPECT_TRUE(std::equal(ra.begin(), ra.end(), rb.begin()));
  }
}

TEST(ComposeEmbeddings, Errors) {
  TempDir dir;
  testkit::PlantedSpec spec;
  spec.train = 3;
  spec.valid = 1;
  spec.test = 1;
  const auto manifest = load_manifest(testkit::write_planted_task(dir.path(), "toy", "A", spec));
  EXPECT_THROW(compose_embeddings(manifest, "A", "Z"), ConfigError);
  std::filesystem::remove(manifest.samples[2].tensors.at("B").front());
  EXPECT_THROW(compose_embeddings(manifest, "A", "B"), DataError);
  EXPECT_THROW(check_manifest_files(manifest), DataError);
}

TEST(EmbeddingSet, SaveLoad) {
  TempDir dir;
  EmbeddingSet set;
  set.task = "t";
  set.model = "m";
  set.provenance = {"10", "15"};
  set.dims = 3;
  set.values = {1, 2, 3, 4, 5, 6};
  set.ids = {"a", "b"};
  set.labels = {"x", "y"};
  set.splits = {Split::train, Split::test};
  set.save(dir / "emb");
  const auto back = EmbeddingSet::load(dir / "emb");
  EXPECT_EQ(back.values, set.values);
  EXPECT_EQ(back.ids, set.ids);
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_EQ(back.splits, set.splits);
  EXPECT_EQ(back.provenance, set.provenance);
  EXPECT_EQ(load_tensor(dir / "emb.npy").shape(), (Shape{2, 3}));
}
