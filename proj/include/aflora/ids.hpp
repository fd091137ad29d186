#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>

namespace aflora {

// The six adapted linear sites of one encoder block.
enum class Site : int { Q = 0, K = 1, V = 2, O = 3, FfnInter = 4, FfnOut = 5 };

inline constexpr std::array<Site, 6> kAllSites = {Site::Q, Site::K,        Site::V,
                                                  Site::O, Site::FfnInter, Site::FfnOut};

enum class SiteKind { Attention, Ffn };

inline SiteKind site_kind(Site s) {
    return (s == Site::FfnInter || s == Site::FfnOut) ? SiteKind::Ffn : SiteKind::Attention;
}

// Short labels matching the freeze-heatmap row names.
std::string site_name(Site s);
Site site_from_name(const std::string& name);

enum class PmMatrix : int { A = 0, B = 1 };

std::string pm_matrix_name(PmMatrix m);

struct LayerId {
    int block = 0;
    Site site = Site::Q;

    auto operator<=>(const LayerId&) const = default;
};

// Identifies one projection matrix; the ordering is the structural tie-break
// used whenever freezing scores collide.
struct PmId {
    int block = 0;
    Site site = Site::Q;
    PmMatrix matrix = PmMatrix::A;

    auto operator<=>(const PmId&) const = default;
};

std::string pm_id_str(const PmId& id);

}  // namespace aflora
