#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "support.hpp"

using namespace evolrp;

TEST(Shapes, SameSeedIsBitIdentical) {
  EXPECT_EQ(generate_shapes(10, 28, 0.05, 7), generate_shapes(10, 28, 0.05, 7));
  EXPECT_NE(generate_shapes(10, 28, 0.05, 7).images, generate_shapes(10, 28, 0.05, 8).images);
}

TEST(Shapes, ExactClassBalance) {
  const auto ds = generate_shapes(500, 28, 0.05, 7);
  ASSERT_EQ(ds.size(), 2000u);
  std::array<std::size_t, 4> counts{};
  for (auto l : ds.labels) ++counts.at(l);
  for (auto c : counts) EXPECT_EQ(c, 500u);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"square", "circle", "cross", "triangle"}));
}

TEST(Shapes, PixelsInUnitInterval) {
  const auto ds = generate_shapes(25, 20, 0.3, 1);
  for (const auto& img : ds.images) {
    EXPECT_EQ(img.shape(), (Shape{1, 20, 20}));
    for (float v : img.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Shapes, NoiselessImagesAreTwoLevel) {
  const auto ds = generate_shapes(10, 28, 0.0, 4);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::set<float> levels(ds.images[i].values().begin(), ds.images[i].values().end());
    ASSERT_EQ(levels.size(), 2u);
    EXPECT_EQ(*levels.begin(), 0.0f);
    EXPECT_GE(*levels.rbegin(), 0.6f);
    // foreground stays inside the recorded box
    const auto& b = ds.boxes[i];
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c)
        if (ds.images[i][r * 28 + c] > 0.0f) EXPECT_TRUE(b.contains(r, c));
  }
}

TEST(Shapes, RejectsTinyImages) { EXPECT_THROW(generate_shapes(1, 15, 0.0, 1), std::invalid_argument); }

TEST(MultiObject, TwoDistinctClassesInDisjointBoxes) {
  const auto ds = generate_multiobject(200, 28, 3);
  ASSERT_EQ(ds.size(), 200u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_NE(ds.labels[i][0], ds.labels[i][1]);
    EXPECT_FALSE(ds.boxes[i][0].intersects(ds.boxes[i][1]));
    for (const auto& b : ds.boxes[i]) {
      EXPECT_LE(b.row1, 28u);
      EXPECT_LE(b.col1, 28u);
    }
  }
}

TEST(MultiObject, SquareAndCircleMetadata) {
  const auto ds = generate_multiobject(200, 28, 3);
  bool found = false;
  for (std::size_t i = 0; i < ds.size() && !found; ++i) {
    std::set<std::size_t> labels(ds.labels[i].begin(), ds.labels[i].end());
    if (labels == std::set<std::size_t>{0, 1}) {
      found = true;
      EXPECT_FALSE(ds.boxes[i][0].intersects(ds.boxes[i][1]));
    }
  }
  EXPECT_TRUE(found);
}

TEST(MultiObject, Deterministic) { EXPECT_EQ(generate_multiobject(20, 28, 9), generate_multiobject(20, 28, 9)); }

TEST(MultiObject, TooSmallCanvasFails) {
  try {
    generate_multiobject(1, 16, 1);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("could not place"), std::string::npos);
  }
}

TEST(Export, WritesPgmAndIndex) {
  const auto dir = std::filesystem::temp_directory_path() / "evolrp_tests" / "export";
  std::filesystem::remove_all(dir);
  const auto ds = generate_shapes(2, 16, 0.0, 2);
  export_dataset(ds, dir);
  std::ifstream idx(dir / "labels.csv");
  std::string header, line;
  std::getline(idx, header);
  EXPECT_EQ(header, "file,label,class_name,row0,col0,row1,col1");
  std::size_t rows = 0;
  while (std::getline(idx, line)) ++rows;
  EXPECT_EQ(rows, ds.size());
  const auto img = read_pgm(dir / "image_00000.pgm");
  EXPECT_EQ(img.shape(), (Shape{1, 16, 16}));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(img[i], ds.images[0][i], 0.5 / 255.0 + 1e-6);
}
