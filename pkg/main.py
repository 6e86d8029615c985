import os
import sys

# 設置環境變量，確保在程序開始時就有正確的設定
os.environ["PYTHONIOENCODING"] = "utf-8"

from eland.cli.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
