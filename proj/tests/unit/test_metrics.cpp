#include <gtest/gtest.h>

#include <vector>

#include "lcl/errors.hpp"
#include "lcl/metrics/metrics.hpp"

using namespace lcl;

namespace {

MetricsLedger two_tasks() {
    MetricsLedger l({"a", "b"});
    l.set(0, 0, 80.0);
    l.set(1, 0, 70.0);
    l.set(1, 1, 60.0);
    return l;
}

}  // namespace

TEST(Dsc, WorkedExamples) {
    const std::vector<int> pred{1, 1, 0, 0}, target{1, 0, 0, 0};
    EXPECT_NEAR(dsc(pred, target), 200.0 / 3.0, 1e-12);
    const std::vector<int> none(4, 0);
    EXPECT_EQ(dsc(none, none), 100.0);
    EXPECT_EQ(dsc(none, target), 0.0);
    const std::vector<int> labelled{3, 3, 0, 0};
    EXPECT_EQ(dsc(labelled, pred), 100.0);  // any nonzero id counts as inside
    const std::vector<int> shorter{1};
    EXPECT_THROW(dsc(shorter, target), ShapeError);
}

TEST(Bwt, AdditiveAndRatioForms) {
    const MetricsLedger l = two_tasks();
    EXPECT_DOUBLE_EQ(bwt(l), 90.0);
    EXPECT_DOUBLE_EQ(bwt(l, BwtForm::Ratio), 87.5);
    EXPECT_DOUBLE_EQ(l.average_final(), 65.0);

    MetricsLedger c({"a", "b", "c"});
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t j = 0; j <= t; ++j) c.set(t, j, 42.0);
    EXPECT_DOUBLE_EQ(bwt(c), 100.0);
    EXPECT_DOUBLE_EQ(bwt(c, BwtForm::Ratio), 100.0);

    // Three tasks, hand-computed: 100 + ((50 - 90) + (75 - 80)) / 2
    MetricsLedger h({"a", "b", "c"});
    h.set(0, 0, 90), h.set(1, 0, 60), h.set(1, 1, 80), h.set(2, 0, 50), h.set(2, 1, 75), h.set(2, 2, 70);
    EXPECT_DOUBLE_EQ(bwt(h), 77.5);
}

TEST(Bwt, UndefinedCases) {
    MetricsLedger one({"a"});
    one.set(0, 0, 50.0);
    EXPECT_THROW(bwt(one), UndefinedMetric);
    MetricsLedger z({"a", "b"});
    z.set(0, 0, 0.0), z.set(1, 0, 0.0), z.set(1, 1, 10.0);
    EXPECT_THROW(bwt(z, BwtForm::Ratio), UndefinedMetric);
    EXPECT_DOUBLE_EQ(bwt(z), 100.0);
}

TEST(Ledger, StorageAndCsv) {
    MetricsLedger l = two_tasks();
    EXPECT_TRUE(l.has(1, 0));
    EXPECT_FALSE(l.has(0, 1));
    EXPECT_EQ(l.final_row(), (std::vector<double>{70.0, 60.0}));
    EXPECT_EQ(report_csv(l), "a,b,Average,BWT\n70,60,65,90\n");
    EXPECT_EQ(report_csv(l, BwtForm::Ratio), "a,b,Average,BWT\n70,60,65,87.5\n");
}

TEST(Ledger, JsonRoundTrip) {
    MetricsLedger l({"x", "y", "z"});
    l.set(0, 0, 1.0 / 3.0), l.set(1, 0, 2.0 / 7.0), l.set(1, 1, 99.25);
    l.set(2, 0, 0.1), l.set(2, 1, 0.2), l.set(2, 2, 0.30000000000000004);
    const MetricsLedger back = parse_ledger_json(ledger_json(l));
    EXPECT_TRUE(back == l);
    EXPECT_EQ(back.at(1, 0), 2.0 / 7.0);
    EXPECT_FALSE(back.has(0, 2));
    EXPECT_THROW(parse_ledger_json("{\"tasks\": 3}"), std::exception);
}

TEST(BwtForm, Names) {
    EXPECT_EQ(parse_bwt_form(bwt_form_name(BwtForm::Ratio)), BwtForm::Ratio);
    EXPECT_EQ(parse_bwt_form(bwt_form_name(BwtForm::Additive)), BwtForm::Additive);
    EXPECT_THROW(parse_bwt_form("nope"), std::exception);
}
