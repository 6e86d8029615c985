import argparse
import asyncio
import logging
import signal
import sys
import time
from typing import List, Optional

from pydantic import ValidationError

from eland import __version__
from eland.cli import commands
from eland.config import ELAND_LOG_DIR, ELAND_LOG_LEVEL
from eland.errors import ElandError
from eland.services.evaluation import METHODS
from eland.utils.helpers import parse_float_list, parse_int_list
from eland.utils.logging_utils import flush_logging, setup_logging

logger = logging.getLogger(__name__)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="RunConfig JSON 檔")
    parser.add_argument("--seed", type=int, help="覆寫設定中的 seed")
    parser.add_argument("--out", help="輸出目錄 (預設為 $ELAND_OUTPUT_DIR/<command>)")


def _data_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="generate 產生的資料集目錄；省略時依設定即時產生")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eland", description="ELAND early anomaly detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=ELAND_LOG_LEVEL)
    parser.add_argument("--no-log-file", action="store_true", help="只輸出到控制台")
    subparsers = parser.add_subparsers(dest="command", required=True)

    generate = subparsers.add_parser("generate", help="產生合成資料集目錄")
    _common_flags(generate)
    generate.add_argument("--calibrate", action="store_true", help="在 manifest 記錄 logistic baseline 的 test AUC")
    generate.set_defaults(handler=commands.generate_command)

    train = subparsers.add_parser("train", help="以單一方法、單一比例訓練並評分")
    _common_flags(train)
    _data_flag(train)
    train.add_argument("--method", choices=METHODS, default="eland-e2e")
    train.add_argument("--fractions", "--fraction", type=parse_float_list, help="單一比例 p，例如 0.2")
    train.set_defaults(handler=commands.train_command)

    sweep = subparsers.add_parser("sweep", help="早期比例 × 方法 × seed 網格")
    _common_flags(sweep)
    _data_flag(sweep)
    sweep.add_argument("--method", choices=METHODS, action="append", help="可重複指定")
    sweep.add_argument("--fractions", type=parse_float_list, help="例如 0.1,0.2,0.4,1.0")
    sweep.add_argument("--seeds", type=parse_int_list, help="例如 0-9 或 0,1,2")
    sweep.add_argument("--workers", type=int, help="process pool 大小")
    sweep.add_argument("--grid", help="敏感度網格，例如 kappa=30,90,150 或 gamma=50,100,200")
    sweep.add_argument("--cache-dir", help="sweep cell 快取目錄")
    sweep.set_defaults(handler=commands.sweep_command)

    augment = subparsers.add_parser("augment-dump", help="輸出每位使用者的預測 item")
    _common_flags(augment)
    _data_flag(augment)
    augment.add_argument("--method", choices=("eland-itr", "eland-e2e"), default="eland-itr")
    augment.add_argument("--fractions", "--fraction", type=parse_float_list)
    augment.set_defaults(handler=commands.augment_dump_command)

    metrics = subparsers.add_parser("metrics", help="分數檔 → AUC/AP")
    _common_flags(metrics)
    _data_flag(metrics)
    metrics.add_argument("--scores", required=True, help="user_id,score CSV")
    metrics.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    metrics.set_defaults(handler=commands.metrics_command)
    return parser


def handle_shutdown_signal(signum, frame):
    """SIGTERM 時記錄關閉訊息並以 KeyboardInterrupt 結束目前的命令"""
    timestamp = time.strftime("%Y-%m-%d %H:%M:%S", time.localtime())
    logger.warning(f"收到關閉訊號 {signum}，正在中止... (時間: {timestamp})")
    flush_logging()
    raise KeyboardInterrupt


def main(argv: Optional[List[str]] = None) -> int:
    """
    CLI 進入點。

    Returns:
        結束碼：0 成功；ElandError 依其 exit_code (驗證錯誤 2、指標無定義 3)；其他錯誤 1
    """
    args = build_parser().parse_args(argv)
    setup_logging(ELAND_LOG_DIR, args.log_level, to_file=not args.no_log_file)
    signal.signal(signal.SIGTERM, handle_shutdown_signal)
    try:
        asyncio.run(args.handler(args))
        return 0
    except ElandError as exc:
        logger.error(f"{type(exc).__name__}: {exc.detail}")
        return exc.exit_code
    except ValidationError as exc:
        logger.error(f"invalid input: {exc}")
        return 2
    except KeyboardInterrupt:
        logger.warning(f"{args.command} interrupted")
        return 130
    except Exception as exc:
        logger.exception(f"全局異常捕獲於 {args.command}: {type(exc).__name__}: {str(exc)}")
        return 1
    finally:
        flush_logging()


if __name__ == "__main__":
    sys.exit(main())
