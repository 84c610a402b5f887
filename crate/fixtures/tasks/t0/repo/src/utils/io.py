from pyspark.sql import DataFrame, SparkSession


def read_dataset(spark: SparkSession, path: str, fmt: str = "parquet") -> DataFrame:
    """Reads a dataset from path in the given format."""
    return spark.read.format(fmt).load(path)


def write_dataset(df: DataFrame, path: str, fmt: str = "parquet", mode: str = "overwrite") -> None:
    """Writes df to path, replacing existing data by default."""
    df.write.format(fmt).mode(mode).save(path)
