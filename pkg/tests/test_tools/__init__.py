"""Tools tests package."""