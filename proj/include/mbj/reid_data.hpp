#pragma once

// Market-1501-style image folders: filenames like `0002_c1s1_000451_03.jpg`
// carry the identity (first underscore-separated field) and the camera
// (digits after 'c'). Images are resized to a fixed shape and flattened
// channel-major into Dataset rows.

#include "mbj/common.hpp"
#include "mbj/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mbj {

struct ReidFileInfo {
    int identity = 0;
    int camera = 0;
};

// Throws DataError for names that do not follow the convention.
inline ReidFileInfo parse_reid_filename(const std::string& stem) {
    auto us = stem.find('_');
    if (us == std::string::npos || us == 0) throw DataError("unparseable re-id filename: " + stem);
    ReidFileInfo info;
    try {
        info.identity = std::stoi(stem.substr(0, us));
    } catch (const std::exception&) {
        throw DataError("unparseable identity in re-id filename: " + stem);
    }
    auto cpos = stem.find('c', us);
    if (cpos == std::string::npos || cpos + 1 >= stem.size() || !std::isdigit(static_cast<unsigned char>(stem[cpos + 1])))
        throw DataError("missing camera id in re-id filename: " + stem);
    std::size_t end = cpos + 1;
    while (end < stem.size() && std::isdigit(static_cast<unsigned char>(stem[end]))) ++end;
    info.camera = std::stoi(stem.substr(cpos + 1, end - cpos - 1));
    return info;
}

// Loads every jpg/png in `dir` (non-recursive), sorted by filename for
// determinism. Junk images (identity -1) are skipped.
inline Dataset load_reid_folder(const std::string& dir, int height, int width) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".jpg" || ext == ".jpeg" || ext == ".png") files.push_back(entry.path());
    }
    if (files.empty()) throw DataError("no images found under: " + dir);
    std::sort(files.begin(), files.end());

    Dataset out;
    out.channels = 3;
    out.height = height;
    out.width = width;
    out.feature_dim = 3 * height * width;
    std::vector<float> row(static_cast<std::size_t>(out.feature_dim));
    for (const auto& path : files) {
        auto info = parse_reid_filename(path.stem().string());
        if (info.identity < 0) continue;
        cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (img.empty()) throw DataError("cannot decode image: " + path.string());
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(width, height), 0, 0, cv::INTER_AREA);
        // BGR -> RGB, channel-major, [0,1]
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    row[static_cast<std::size_t>((c * height + y) * width + x)] =
                        static_cast<float>(resized.at<cv::Vec3b>(y, x)[2 - c]) / 255.0f;
        out.push_row(row.data(), info.identity, info.camera);
    }
    if (out.size() == 0) throw DataError("no usable images under: " + dir);
    out.class_count = 1 + *std::max_element(out.labels.begin(), out.labels.end());
    return out;
}

// Remaps raw identity labels to a contiguous [0, C) range (training needs
// dense class indices); returns old-id -> new-id.
inline std::map<int, int> make_contiguous_labels(Dataset& data) {
    std::map<int, int> remap;
    for (int label : data.labels) remap.emplace(label, 0);
    int next = 0;
    for (auto& [old_id, new_id] : remap) new_id = next++;
    for (auto& label : data.labels) label = remap.at(label);
    data.class_count = next;
    return remap;
}

}  // namespace mbj
