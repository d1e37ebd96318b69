#!/usr/bin/env python3
"""
MICLe CLI 全域入口點
可從任意位置啟動，相對路徑（清單、設定檔、輸出目錄）一律以目前工作目錄解析
"""

import sys
from pathlib import Path


def main():
    # 專案根目錄（scripts 的上一層）下的 src
    src_dir = Path(__file__).resolve().parent.parent / "src"
    sys.path.insert(0, str(src_dir))

    try:
        from main import MicleCLI  # type: ignore
    except ImportError as e:
        print("錯誤: 無法導入 MICLe CLI 模組", file=sys.stderr)
        print("請確認已安裝 requirements.txt 中的套件", file=sys.stderr)
        print(f"詳細錯誤: {e}", file=sys.stderr)
        sys.exit(1)

    sys.exit(MicleCLI().run(sys.argv[1:]))


if __name__ == "__main__":
    main()
