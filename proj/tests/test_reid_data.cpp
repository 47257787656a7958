#include "mbj/reid_data.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <fstream>

using namespace mbj;

TEST_CASE("filename convention parsing") {
    auto a = parse_reid_filename("0002_c1s1_000451_03");
    CHECK(a.identity == 2);
    CHECK(a.camera == 1);
    auto b = parse_reid_filename("1501_c13s6_012345_00");
    CHECK(b.identity == 1501);
    CHECK(b.camera == 13);  // multi-digit camera field
    auto junk = parse_reid_filename("-1_c3s2_000001_00");
    CHECK(junk.identity == -1);

    CHECK_THROWS_AS(parse_reid_filename("_c1s1_000451_03"), DataError);     // empty identity
    CHECK_THROWS_AS(parse_reid_filename("abcd_c1s1_000451_03"), DataError); // non-numeric identity
    CHECK_THROWS_AS(parse_reid_filename("0005_1s1_000451_03"), DataError);  // camera marker missing
    CHECK_THROWS_AS(parse_reid_filename("0005_cXs1_000451_03"), DataError); // non-digit camera
    CHECK_THROWS_AS(parse_reid_filename("0005"), DataError);                // no underscore
}

TEST_CASE("folder loading: sorted, junk-filtered, channel-major rgb in [0,1]") {
    namespace fs = std::filesystem;
    fs::path dir = testutil::scratch_dir("reid_folder");

    const int H = 4, W = 3;
    cv::Mat first(H, W, CV_8UC3, cv::Scalar(40, 80, 200));   // BGR constant
    cv::Mat second(H, W, CV_8UC3, cv::Scalar(0, 255, 0));
    cv::Mat junk(H, W, CV_8UC3, cv::Scalar(9, 9, 9));
    REQUIRE(cv::imwrite((dir / "0002_c1s1_000451_03.png").string(), first));
    REQUIRE(cv::imwrite((dir / "0007_c2s3_000001_00.png").string(), second));
    REQUIRE(cv::imwrite((dir / "-1_c1s1_000000_00.png").string(), junk));
    std::ofstream(dir / "notes.txt") << "not an image";

    Dataset data = load_reid_folder(dir.string(), H, W);
    REQUIRE(data.size() == 2);
    CHECK(data.channels == 3);
    CHECK(data.height == H);
    CHECK(data.width == W);
    CHECK(data.feature_dim == 3 * H * W);
    CHECK(data.labels == std::vector<int>{2, 7});
    CHECK(data.cameras == std::vector<int>{1, 2});
    CHECK(data.class_count == 8);  // raw ids are kept as labels

    // solid BGR(40,80,200) must become planes R=200, G=80, B=40
    const float* r0 = data.row(0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            CHECK(r0[(0 * H + y) * W + x] == 200.0f / 255.0f);
            CHECK(r0[(1 * H + y) * W + x] == 80.0f / 255.0f);
            CHECK(r0[(2 * H + y) * W + x] == 40.0f / 255.0f);
        }
    const float* r1 = data.row(1);
    CHECK(r1[0] == 0.0f);
    CHECK(r1[(1 * H) * W] == 1.0f);
}

TEST_CASE("folder loading failure modes") {
    namespace fs = std::filesystem;
    CHECK_THROWS_AS(load_reid_folder("/nonexistent/reid/path", 4, 3), DataError);

    fs::path empty = testutil::scratch_dir("reid_empty");
    CHECK_THROWS_AS(load_reid_folder(empty.string(), 4, 3), DataError);

    // a folder holding only junk identities has nothing usable
    fs::path junk_only = testutil::scratch_dir("reid_junk");
    cv::Mat img(4, 3, CV_8UC3, cv::Scalar(1, 2, 3));
    REQUIRE(cv::imwrite((junk_only / "-1_c1s1_000000_00.png").string(), img));
    CHECK_THROWS_AS(load_reid_folder(junk_only.string(), 4, 3), DataError);

    // undecodable payload with an image extension
    fs::path broken = testutil::scratch_dir("reid_broken");
    std::ofstream(broken / "0001_c1s1_000000_00.png") << "zzzz";
    CHECK_THROWS_AS(load_reid_folder(broken.string(), 4, 3), DataError);
}

TEST_CASE("identity remapping densifies labels") {
    Dataset data;
    data.feature_dim = 2;
    float v[2] = {0.0f, 0.0f};
    data.push_row(v, 3, 1);
    data.push_row(v, 1, 2);
    data.push_row(v, 3, 1);
    data.push_row(v, 9, 1);
    auto remap = make_contiguous_labels(data);
    CHECK(data.labels == std::vector<int>{1, 0, 1, 2});
    CHECK(data.class_count == 3);
    REQUIRE(remap.size() == 3);
    CHECK(remap.at(1) == 0);
    CHECK(remap.at(3) == 1);
    CHECK(remap.at(9) == 2);
}
