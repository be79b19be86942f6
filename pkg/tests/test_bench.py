from croprot.bench import BenchReport, StageTiming, bench_prep, main


def test_small_bench_identical_caches():
    report = bench_prep(n_parcels=40, workers=(1, 2), seed=3, enforce=False)
    assert [r.workers for r in report.runs] == [1, 2]
    assert report.identical_caches
    assert report.n_series == 40 * 5
    assert report.peak_rss_mb > 0
    text = report.to_text()
    for key in ("workers\tprep_s\tfeatures_s", "speedup\t", "identical_caches\tTrue", "peak_rss_mb\t"):
        assert key in text


def test_report_arithmetic():
    r = BenchReport(10, 50, 0.1, [StageTiming(1, 3.0, 1.0, 50), StageTiming(4, 1.0, 1.0, 50)])
    assert r.speedup == 2.0 and r.runs[0].parcels_per_s == 12.5


def test_main_prints_report(capsys):
    assert main(["20"]) == 0
    assert "parcel_seasons\t100" in capsys.readouterr().out
