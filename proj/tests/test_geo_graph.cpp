#include <catch2/catch_amalgamated.hpp>

#include "lightningnet/graph.hpp"
#include "lightningnet/rng.hpp"

using namespace lnet;

namespace {

// independent haversine implementation used as an oracle
double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    const double d2r = kPi / 180.0;
    const double dlat = (lat2 - lat1) * d2r, dlon = (lon2 - lon1) * d2r;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * d2r) * std::cos(lat2 * d2r) *
                         std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

Tensor2D path3() {
    return Tensor2D(3, 3, {0, 1, 0, 1, 0, 1, 0, 1, 0});
}

Tensor2D complete3() {
    return Tensor2D(3, 3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
}

} // namespace

TEST_CASE("geodesic London-Paris within 0.5 km of the haversine oracle") {
    const double lon_lat = 51.5074, lon_lon = -0.1278;
    const double par_lat = 48.8566, par_lon = 2.3522;
    const double got = geodesic_distance(lon_lat, lon_lon, par_lat, par_lon);
    const double oracle = haversine_km(lon_lat, lon_lon, par_lat, par_lon);
    REQUIRE(std::abs(got - oracle) < 0.5);
    REQUIRE(got == Catch::Approx(343.5).margin(1.5));
}

TEST_CASE("geodesic identities") {
    REQUIRE(geodesic_distance(10, 20, 10, 20) == Catch::Approx(0.0).margin(1e-9));
    // antipodal points
    REQUIRE(geodesic_distance(0, 0, 0, 180) == Catch::Approx(kPi * kEarthRadiusKm).margin(1e-6));
    REQUIRE(geodesic_distance(90, 0, -90, 0) == Catch::Approx(kPi * kEarthRadiusKm).margin(1e-6));
    // symmetry
    REQUIRE(geodesic_distance(12, 34, -45, 100) ==
            Catch::Approx(geodesic_distance(-45, 100, 12, 34)).margin(1e-12));
}

TEST_CASE("geodesic triangle inequality on 1000 random triples") {
    Rng rng(2024);
    for (int it = 0; it < 1000; ++it) {
        double la[3], lo[3];
        for (int p = 0; p < 3; ++p) {
            la[p] = rng.uniform(-90, 90);
            lo[p] = rng.uniform(-180, 180);
        }
        const double ab = geodesic_distance(la[0], lo[0], la[1], lo[1]);
        const double bc = geodesic_distance(la[1], lo[1], la[2], lo[2]);
        const double ac = geodesic_distance(la[0], lo[0], la[2], lo[2]);
        REQUIRE(ac <= ab + bc + 1e-9);
    }
}

TEST_CASE("geodesic rejects out-of-range coordinates") {
    REQUIRE_THROWS_AS(geodesic_distance(91, 0, 0, 0), validation_error);
    REQUIRE_THROWS_AS(geodesic_distance(0, 181, 0, 0), validation_error);
    REQUIRE_THROWS_AS(geodesic_distance(0, 0, -91, 0), validation_error);
}

TEST_CASE("adjacency construction thresholds pairwise distances") {
    CellNetwork net;
    net.cell_ids = {"a", "b", "c"};
    net.lat_deg = {40.0, 40.0, 40.1};
    net.lon_deg = {23.0, 23.005, 23.0};
    Tensor2D dist = distance_matrix(net);
    REQUIRE(dist(0, 1) < 1.0);  // ~0.43 km
    REQUIRE(dist(0, 2) > 10.0); // ~11 km
    Tensor2D a = build_adjacency(dist, 1.0);
    REQUIRE(a(0, 1) == 1.0);
    REQUIRE(a(1, 0) == 1.0);
    REQUIRE(a(0, 2) == 0.0);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(a(i, i) == 0.0);
    // threshold 0: only exact co-location connects
    Tensor2D a0 = build_adjacency(dist, 0.0);
    REQUIRE(a0(0, 1) == 0.0);
    REQUIRE_THROWS_AS(build_adjacency(dist, -1.0), validation_error);
}

TEST_CASE("two-node renormalized adjacency is exactly all 0.5") {
    Tensor2D a(2, 2, {0, 1, 1, 0});
    Tensor2D ah = renormalized_operator(a);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) REQUIRE(ah(i, j) == 0.5);
}

TEST_CASE("renormalized operator of an edgeless graph is the identity") {
    Tensor2D a(3, 3);
    REQUIRE(renormalized_operator(a) == Tensor2D::identity(3));
}

TEST_CASE("add_self_loops and degree matrix") {
    Tensor2D at = add_self_loops(path3());
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(at(i, i) == 1.0);
    Tensor2D d = degree_matrix(at);
    REQUIRE(d(0, 0) == 2.0);
    REQUIRE(d(1, 1) == 3.0);
    REQUIRE(d(2, 2) == 2.0);
    REQUIRE_THROWS_AS(add_self_loops(at), validation_error); // nonzero diagonal
}

TEST_CASE("laplacian structure and row sums") {
    Tensor2D l = laplacian(path3());
    REQUIRE(l(0, 0) == 1.0);
    REQUIRE(l(1, 1) == 2.0);
    REQUIRE(l(0, 1) == -1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += l(i, j);
        REQUIRE(s == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("P3 and K3 Laplacian spectra match the analytic values") {
    Spectrum p3 = symmetric_eigenvalues(laplacian(path3()));
    Spectrum k3 = symmetric_eigenvalues(laplacian(complete3()));
    REQUIRE(p3.eigenvalues.size() == 3);
    REQUIRE(p3.eigenvalues[0] == Catch::Approx(3.0).margin(1e-8));
    REQUIRE(p3.eigenvalues[1] == Catch::Approx(1.0).margin(1e-8));
    REQUIRE(p3.eigenvalues[2] == Catch::Approx(0.0).margin(1e-8));
    REQUIRE(k3.eigenvalues[0] == Catch::Approx(3.0).margin(1e-8));
    REQUIRE(k3.eigenvalues[1] == Catch::Approx(3.0).margin(1e-8));
    REQUIRE(k3.eigenvalues[2] == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("Jacobi eigenvalues satisfy trace/Frobenius/determinant identities") {
    Rng rng(5);
    for (int it = 0; it < 20; ++it) {
        const std::size_t n = 3 + rng.uniform_index(4);
        Tensor2D m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j)
                m(i, j) = m(j, i) = rng.uniform(-2, 2);
        Spectrum s = symmetric_eigenvalues(m);
        double trace = 0.0, frob = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            trace += m(i, i);
            for (std::size_t j = 0; j < n; ++j) frob += m(i, j) * m(i, j);
        }
        double esum = 0.0, esq = 0.0;
        for (double v : s.eigenvalues) {
            esum += v;
            esq += v * v;
        }
        REQUIRE(esum == Catch::Approx(trace).margin(1e-8));
        REQUIRE(esq == Catch::Approx(frob).margin(1e-8));
        REQUIRE(std::is_sorted(s.eigenvalues.rbegin(), s.eigenvalues.rend()));
    }
}

TEST_CASE("symmetric_eigenvalues rejects asymmetric input") {
    Tensor2D m(2, 2, {1, 2, 3, 4});
    REQUIRE_THROWS_AS(symmetric_eigenvalues(m), validation_error);
}

TEST_CASE("Eq.-8 similarity of P3 vs K3 equals 4") {
    Spectrum p3 = symmetric_eigenvalues(laplacian(path3()));
    Spectrum k3 = symmetric_eigenvalues(laplacian(complete3()));
    REQUIRE(spectrum_head_count(p3) == 2);
    REQUIRE(spectrum_head_count(k3) == 2);
    REQUIRE(subgraph_similarity(p3, k3) == Catch::Approx(4.0).margin(1e-8));
    REQUIRE(subgraph_similarity(k3, p3) == Catch::Approx(4.0).margin(1e-8));
}

TEST_CASE("isomorphic sub-graphs have similarity below 1e-9") {
    // same path graph under a node relabeling
    Tensor2D a = path3();
    Tensor2D b(3, 3, {0, 0, 1, 0, 0, 1, 1, 1, 0}); // path with center last
    Spectrum sa = symmetric_eigenvalues(laplacian(a));
    Spectrum sb = symmetric_eigenvalues(laplacian(b));
    REQUIRE(subgraph_similarity(sa, sb) < 1e-9);
    REQUIRE(subgraph_similarity(sa, sa) == 0.0);
}

TEST_CASE("partition produces equally sized (+-1) spatially sorted sub-graphs") {
    CellNetwork net;
    const std::size_t n = 11;
    Rng rng(3);
    for (std::size_t i = 0; i < n; ++i) {
        net.cell_ids.push_back("c" + std::to_string(i));
        net.lat_deg.push_back(rng.uniform(40.0, 41.0));
        net.lon_deg.push_back(rng.uniform(23.0, 24.0));
    }
    SubGraphPartition part = partition_graph(net, 3);
    REQUIRE(part.sizes == std::vector<std::size_t>{4, 4, 3});
    std::size_t total = 0;
    for (auto s : part.sizes) total += s;
    REQUIRE(total == n);
    // spatial mode: members of earlier groups have smaller (lat, lon)
    auto key = [&](std::size_t i) { return std::pair(net.lat_deg[i], net.lon_deg[i]); };
    for (std::size_t g = 0; g + 1 < 3; ++g)
        for (std::size_t a : part.members(g))
            for (std::size_t b : part.members(g + 1)) REQUIRE(key(a) < key(b));
    REQUIRE_THROWS_AS(partition_graph(net, 0), validation_error);
    REQUIRE_THROWS_AS(partition_graph(net, n + 1), validation_error);
}

TEST_CASE("random partition is seeded and balanced") {
    CellNetwork net;
    for (std::size_t i = 0; i < 10; ++i) {
        net.cell_ids.push_back("c" + std::to_string(i));
        net.lat_deg.push_back(static_cast<double>(i));
        net.lon_deg.push_back(0.0);
    }
    auto p1 = partition_graph(net, 2, 7, PartitionMode::random);
    auto p2 = partition_graph(net, 2, 7, PartitionMode::random);
    auto p3 = partition_graph(net, 2, 8, PartitionMode::random);
    REQUIRE(p1.assignment == p2.assignment);
    REQUIRE(p1.sizes == std::vector<std::size_t>{5, 5});
    REQUIRE(p1.assignment != p3.assignment); // overwhelmingly likely
}

TEST_CASE("rank_subgraphs_by_hotspots sorts by positive mass with stable ties") {
    SubGraphPartition part;
    part.k = 3;
    part.assignment = {0, 0, 1, 1, 2, 2};
    part.sizes = {2, 2, 2};
    std::vector<std::vector<std::uint8_t>> labels = {
        {0, 1, 1, 1, 0, 0},
        {0, 0, 1, 0, 0, 0},
    };
    auto order = rank_subgraphs_by_hotspots(part, labels);
    REQUIRE(order == std::vector<std::size_t>{1, 0, 2});
    // tie between empty groups breaks toward the lower index
    std::vector<std::vector<std::uint8_t>> none = {{0, 0, 0, 0, 0, 0}};
    REQUIRE(rank_subgraphs_by_hotspots(part, none) ==
            std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("induced_subgraph drops cross edges") {
    Tensor2D a(4, 4);
    a(0, 1) = a(1, 0) = 1.0;
    a(1, 2) = a(2, 1) = 1.0;
    a(2, 3) = a(3, 2) = 1.0;
    Tensor2D sub = induced_subgraph(a, {0, 1, 3});
    REQUIRE(sub(0, 1) == 1.0);
    REQUIRE(sub(1, 2) == 0.0); // 1-3 were not adjacent
    REQUIRE(sub(0, 2) == 0.0);
}

TEST_CASE("renormalized operator rows of a regular graph sum to 1") {
    Tensor2D ah = renormalized_operator(complete3());
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += ah(i, j);
        REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
    }
}
