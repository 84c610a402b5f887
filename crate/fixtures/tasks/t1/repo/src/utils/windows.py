from pyspark.sql import DataFrame, functions as F


def trailing_window(df: DataFrame, ts_col: str, days: int, run_date: str) -> DataFrame:
    """Keeps rows whose ts_col falls within `days` days before run_date."""
    start = F.date_sub(F.lit(run_date), days)
    return df.where((F.col(ts_col) >= start) & (F.col(ts_col) < F.lit(run_date)))
